use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::MlpConfig;
use super::network::{DropoutMask, Mode, Network};
use super::{sigmoid, Samples};
use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::metrics::bce_loss;
use crate::rng::{stream, StreamRng};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

/// Adam with L2 penalty folded into the gradient by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(tensor_lens: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), self.m.len(), "tensor count changed");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the learning rate to use for the next epoch.
    pub fn observe(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// Tracks the best validation loss and says when to stop.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records an epoch; returns `true` when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs > self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Something trained in minibatch epochs with a scalar validation loss.
pub(crate) trait EpochModel {
    type Snapshot;

    fn train_batch(&mut self, batch: &[usize], lr: f64, rng: &mut StreamRng) -> Result<()>;
    fn valid_loss(&self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
}

pub(crate) struct FitResult<S> {
    pub best: S,
    pub best_epoch: usize,
    pub valid_at_best: f64,
    pub history: Vec<f64>,
}

/// Epoch 0 is the initial model. Each later epoch visits the training set in
/// a fresh order, then scores the validation set.
pub(crate) fn fit_epochs<M: EpochModel>(
    model: &mut M,
    n_train: usize,
    config: &MlpConfig,
    shuffle_rng: &mut StreamRng,
    batch_rng: &mut StreamRng,
) -> Result<FitResult<M::Snapshot>> {
    let check = |epoch: usize, v: f64| {
        if v.is_nan() {
            Err(Error::Numerical(format!("validation loss is NaN at epoch {epoch}")))
        } else {
            Ok(v)
        }
    };
    let mut stopper = EarlyStopping::new(config.patience_early_stop);
    let mut plateau = Plateau::new(config.scheduler_factor, config.patience_scheduler);
    let mut lr = config.learning_rate;

    let v0 = check(0, model.valid_loss()?)?;
    stopper.observe(0, v0);
    plateau.observe(v0, lr);
    let mut best = model.snapshot();
    let mut history = vec![v0];

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            model.train_batch(batch, lr, batch_rng)?;
        }
        let v = check(epoch, model.valid_loss()?)?;
        history.push(v);
        if stopper.observe(epoch, v) {
            best = model.snapshot();
        } else if stopper.should_stop() {
            break;
        }
        lr = plateau.observe(v, lr);
    }
    Ok(FitResult {
        best,
        best_epoch: stopper.best_epoch(),
        valid_at_best: stopper.best(),
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedMlp {
    pub config: MlpConfig,
    pub network: Network,
    pub best_epoch: usize,
    pub valid_bce_at_best: f64,
    /// Validation BCE per epoch, epoch 0 being the initial parameters.
    pub history: Vec<f64>,
}

impl TrainedMlp {
    pub fn forward(&self, x: &Fingerprint, mode: Mode, rng: Option<&mut StreamRng>) -> Result<(f64, f64)> {
        self.network.forward(x, self.config.dropout_rate, mode, rng)
    }

    /// Eval-mode probability.
    pub fn predict(&self, x: &Fingerprint) -> Result<f64> {
        Ok(sigmoid(self.network.logit(x, None)?))
    }

    pub fn predict_all(&self, xs: &[&Fingerprint]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.network.sizes() != self.config.layer_sizes() {
            return Err(Error::Contract(format!(
                "layer sizes {:?} do not match config {:?}",
                self.network.sizes(),
                self.config.layer_sizes()
            )));
        }
        check_shapes(&self.network)?;
        if !self.network.is_finite() {
            return Err(Error::Numerical("non-finite parameter".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_shapes(net: &Network) -> Result<()> {
    for (k, l) in net.layers.iter().enumerate() {
        if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
            return Err(Error::Contract(format!("layer {k} arrays do not match shape {}x{}", l.n_in, l.n_out)));
        }
        if k > 0 && net.layers[k - 1].n_out != l.n_in {
            return Err(Error::Contract(format!("layer {k} input width mismatch")));
        }
    }
    if net.layers.last().map(|l| l.n_out) != Some(1) {
        return Err(Error::Contract("output layer must have width 1".into()));
    }
    Ok(())
}

pub(crate) fn check_training_inputs(train: &Samples<'_>, valid: &Samples<'_>, input_dim: usize) -> Result<()> {
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InsufficientData("training and validation sets must be non-empty".into()));
    }
    for x in train.fps.iter().chain(&valid.fps) {
        if x.len() != input_dim {
            return Err(Error::Dimension {
                expected: input_dim,
                actual: x.len(),
            });
        }
    }
    Ok(())
}

struct MlpTrainer<'a> {
    network: Network,
    grad: Network,
    adam: Adam,
    dropout_rate: f64,
    weight_decay: f64,
    train: &'a Samples<'a>,
    valid: &'a Samples<'a>,
}

impl EpochModel for MlpTrainer<'_> {
    type Snapshot = Network;

    fn train_batch(&mut self, batch: &[usize], lr: f64, rng: &mut StreamRng) -> Result<()> {
        let fps: Vec<&Fingerprint> = batch.iter().map(|&i| self.train.fps[i]).collect();
        let labels: Vec<bool> = batch.iter().map(|&i| self.train.labels[i]).collect();
        let masks: Option<Vec<DropoutMask>> = (self.dropout_rate > 0.0).then(|| {
            let widths = self.network.hidden_widths();
            batch
                .iter()
                .map(|_| DropoutMask::sample(&widths, self.dropout_rate, rng))
                .collect()
        });
        self.network
            .loss_and_grad(&fps, &labels, masks.as_deref(), self.weight_decay, &mut self.grad)?;
        let grads: Vec<&[f64]> = self.grad.tensors();
        self.adam.step(self.network.tensors_mut(), grads, lr);
        Ok(())
    }

    fn valid_loss(&self) -> Result<f64> {
        let probs = self
            .valid
            .fps
            .iter()
            .map(|x| self.network.logit(x, None).map(sigmoid))
            .collect::<Result<Vec<_>>>()?;
        bce_loss(&probs, &self.valid.labels)
    }

    fn snapshot(&self) -> Network {
        self.network.clone()
    }
}

/// Trains with Adam on minibatch BCE, keeping the parameters of the epoch
/// with the lowest validation BCE.
pub fn train_mlp(train: &Samples<'_>, valid: &Samples<'_>, config: &MlpConfig) -> Result<TrainedMlp> {
    config.validate()?;
    check_training_inputs(train, valid, config.input_dim)?;
    let sizes = config.layer_sizes();
    let network = Network::he_uniform(&sizes, &mut stream(config.seed, &[STREAM_INIT]));
    let lens: Vec<usize> = network.tensors().iter().map(|t| t.len()).collect();
    let mut trainer = MlpTrainer {
        grad: network.clone(),
        network,
        adam: Adam::new(&lens),
        dropout_rate: config.dropout_rate,
        weight_decay: config.weight_decay,
        train,
        valid,
    };
    let fit = fit_epochs(
        &mut trainer,
        train.len(),
        config,
        &mut stream(config.seed, &[STREAM_SHUFFLE]),
        &mut stream(config.seed, &[STREAM_DROPOUT]),
    )?;
    let model = TrainedMlp {
        config: config.clone(),
        network: fit.best,
        best_epoch: fit.best_epoch,
        valid_bce_at_best: fit.valid_at_best,
        history: fit.history,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    // label = bit 0 for the first two labellings used below; bit 1 is noise
    fn toy_fps() -> Vec<Fingerprint> {
        [vec![0usize], vec![0, 1], vec![], vec![1]]
            .into_iter()
            .map(|ones| Fingerprint::from_indices(2, ones).unwrap())
            .collect()
    }

    fn toy_config() -> MlpConfig {
        MlpConfig {
            input_dim: 2,
            hidden_dim: 8,
            n_hidden_layers: 2,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            max_epochs: 500,
            patience_early_stop: 500,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(&[2]);
        let mut p = vec![1.0, -1.0];
        adam.step(vec![&mut p], vec![&[0.5, -2.0]], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7, "{p:?}");
    }

    #[test]
    fn plateau_reduces_after_patience_and_resets() {
        let mut s = Plateau::new(0.5, 1);
        let mut lr = 1.0;
        for loss in [1.0, 1.0] {
            lr = s.observe(loss, lr);
        }
        assert_eq!(lr, 1.0);
        lr = s.observe(1.0, lr);
        assert_eq!(lr, 0.5);
        lr = s.observe(1.0, lr);
        assert_eq!(lr, 0.5);
        lr = s.observe(0.5, lr);
        assert_eq!(lr, 0.5);
    }

    #[test]
    fn separable_toy_set_is_fit() {
        let fps = toy_fps();
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let labels = vec![true, true, false, false];
        let data = Samples::new(refs.clone(), labels.clone());
        let model = train_mlp(&data, &data, &toy_config()).unwrap();
        let probs = model.predict_all(&refs).unwrap();
        let bce = bce_loss(&probs, &labels).unwrap();
        assert!(bce < 0.05, "training BCE {bce}");
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let fps = toy_fps();
        let data = Samples::new(fps.iter().collect(), vec![true, true, false, false]);
        let cfg = MlpConfig {
            dropout_rate: 0.25,
            max_epochs: 30,
            batch_size: 3,
            ..toy_config()
        };
        let a = train_mlp(&data, &data, &cfg).unwrap();
        let b = train_mlp(&data, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(&data, &data, &MlpConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.network, c.network);
    }

    #[test]
    fn zero_patience_returns_initial_parameters_after_first_non_improvement() {
        let fps = toy_fps();
        let data = Samples::new(fps.iter().collect(), vec![true, true, false, false]);
        let cfg = MlpConfig {
            learning_rate: 0.0,
            patience_early_stop: 0,
            ..toy_config()
        };
        let model = train_mlp(&data, &data, &cfg).unwrap();
        let init = Network::he_uniform(&cfg.layer_sizes(), &mut stream(cfg.seed, &[STREAM_INIT]));
        assert_eq!(model.best_epoch, 0);
        assert_eq!(model.network, init);
        assert_eq!(model.history.len(), 2);
        assert_eq!(model.history[0], model.history[1]);
    }

    #[test]
    fn returned_epoch_is_best_recorded() {
        let fps = toy_fps();
        let data = Samples::new(fps.iter().collect(), vec![true, false, true, false]);
        let cfg = MlpConfig {
            learning_rate: 0.05,
            patience_early_stop: 5,
            patience_scheduler: 2,
            max_epochs: 200,
            ..toy_config()
        };
        let model = train_mlp(&data, &data, &cfg).unwrap();
        let min = model.history.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(model.valid_bce_at_best, min);
        assert_eq!(model.history[model.best_epoch], min);
        assert!(model.history[..model.best_epoch].iter().all(|&v| v > min));
        let probs = model.predict_all(&data.fps).unwrap();
        assert_eq!(bce_loss(&probs, &data.labels).unwrap(), min);
    }

    #[test]
    fn empty_inputs_rejected() {
        let fps = toy_fps();
        let data = Samples::new(fps.iter().collect(), vec![true; 4]);
        let empty = Samples::default();
        assert!(matches!(
            train_mlp(&data, &empty, &toy_config()),
            Err(Error::InsufficientData(_))
        ));
    }
}
