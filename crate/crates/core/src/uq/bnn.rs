use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Fingerprint;
use crate::error::{Error, Result};
use crate::metrics::bce_loss;
use crate::nn::{sigmoid, softplus, Adam, CheckpointKind, MlpConfig, Network, Samples};
use crate::nn::{check_shapes, check_training_inputs, fit_epochs, EpochModel};
use crate::rng::{stream, StreamRng};

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_VALID: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnnConfig {
    /// Architecture and optimizer settings; dropout and weight decay are
    /// not used.
    pub mlp: MlpConfig,
    pub prior_sigma: f64,
    /// Initial value of every `rho`, giving `sigma = softplus(rho_init)`.
    pub rho_init: f64,
    pub n_train_samples: usize,
    pub n_valid_samples: usize,
    pub n_infer_samples: usize,
}

impl Default for BnnConfig {
    fn default() -> Self {
        Self {
            mlp: MlpConfig::default(),
            prior_sigma: 1.0,
            rho_init: -3.0,
            n_train_samples: 1,
            n_valid_samples: 100,
            n_infer_samples: 100,
        }
    }
}

impl BnnConfig {
    pub fn validate(&self) -> Result<()> {
        self.mlp.validate()?;
        if !(self.prior_sigma > 0.0 && self.prior_sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("prior_sigma {} must be positive", self.prior_sigma)));
        }
        if !self.rho_init.is_finite() {
            return Err(Error::InvalidParams("rho_init must be finite".into()));
        }
        if self.n_train_samples == 0 || self.n_valid_samples == 0 || self.n_infer_samples == 0 {
            return Err(Error::InvalidParams("weight sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Mean-field Gaussian posterior `w ~ N(mu, softplus(rho)^2)` per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnnModel {
    pub config: BnnConfig,
    pub mu: Network,
    pub rho: Network,
    pub best_epoch: usize,
    pub valid_bce_at_best: f64,
    pub history: Vec<f64>,
    /// Inference draw `s` uses `stream(infer_seed, [s])`.
    pub infer_seed: u64,
}

impl CheckpointKind for BnnModel {
    const KIND: &'static str = "bnn";

    fn check(&self) -> Result<()> {
        check_shapes(&self.mu)?;
        check_shapes(&self.rho)?;
        if self.mu.sizes() != self.config.mlp.layer_sizes() || self.rho.sizes() != self.mu.sizes() {
            return Err(Error::Contract("BNN parameter shapes do not match config".into()));
        }
        if !self.mu.is_finite() || !self.rho.is_finite() {
            return Err(Error::Numerical("non-finite BNN parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboGrad {
    pub mu: Network,
    pub rho: Network,
}

/// `KL[N(mu, sigma^2) || N(0, prior_sigma^2)]` summed over all parameters.
pub fn gaussian_kl(mu: &Network, rho: &Network, prior_sigma: f64) -> f64 {
    let inv_2p2 = 1.0 / (2.0 * prior_sigma * prior_sigma);
    let mut kl = 0.0;
    for (mt, rt) in mu.tensors().into_iter().zip(rho.tensors()) {
        for (&m, &r) in mt.iter().zip(rt) {
            let s = softplus(r);
            kl += (prior_sigma / s).ln() + (s * s + m * m) * inv_2p2 - 0.5;
        }
    }
    kl
}

pub fn sample_noise<R: rand::Rng + ?Sized>(like: &Network, rng: &mut R) -> Network {
    let mut eps = like.clone();
    for t in eps.tensors_mut() {
        for e in t.iter_mut() {
            *e = StandardNormal.sample(rng);
        }
    }
    eps
}

/// `mu + softplus(rho) * eps`.
pub fn sample_weights(mu: &Network, rho: &Network, eps: &Network) -> Network {
    let mut w = mu.clone();
    for ((wt, rt), et) in w.tensors_mut().into_iter().zip(rho.tensors()).zip(eps.tensors()) {
        for ((wi, &ri), &ei) in wt.iter_mut().zip(rt).zip(et) {
            *wi += softplus(ri) * ei;
        }
    }
    w
}

/// ELBO objective `KL / n_batches + mean BCE` at the weights drawn with the
/// given noise, and its gradient with respect to `mu` and `rho`.
pub fn elbo_loss_with_noise(
    mu: &Network,
    rho: &Network,
    prior_sigma: f64,
    fps: &[&Fingerprint],
    labels: &[bool],
    n_batches: usize,
    eps: &Network,
) -> Result<(f64, ElboGrad)> {
    if n_batches == 0 {
        return Err(Error::InvalidParams("n_batches must be at least 1".into()));
    }
    let w = sample_weights(mu, rho, eps);
    let mut grad_w = w.clone();
    let bce = w.loss_and_grad(fps, labels, None, 0.0, &mut grad_w)?;
    let scale = 1.0 / n_batches as f64;
    let inv_p2 = 1.0 / (prior_sigma * prior_sigma);
    let loss = gaussian_kl(mu, rho, prior_sigma) * scale + bce;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite ELBO {loss}")));
    }
    let mut g_mu = grad_w.clone();
    let mut g_rho = grad_w;
    let params = mu.tensors().into_iter().zip(rho.tensors()).zip(eps.tensors());
    for ((gm, gr), ((m, r), e)) in g_mu.tensors_mut().into_iter().zip(g_rho.tensors_mut()).zip(params) {
        for i in 0..gm.len() {
            let s = softplus(r[i]);
            let gw = gm[i];
            gm[i] = gw + m[i] * inv_p2 * scale;
            gr[i] = (gw * e[i] + (-1.0 / s + s * inv_p2) * scale) * sigmoid(r[i]);
        }
    }
    Ok((loss, ElboGrad { mu: g_mu, rho: g_rho }))
}

/// [`elbo_loss_with_noise`] with `eps ~ N(0, 1)` drawn from `rng`.
pub fn elbo_loss(
    mu: &Network,
    rho: &Network,
    prior_sigma: f64,
    fps: &[&Fingerprint],
    labels: &[bool],
    n_batches: usize,
    rng: &mut StreamRng,
) -> Result<(f64, ElboGrad)> {
    let eps = sample_noise(mu, rng);
    elbo_loss_with_noise(mu, rho, prior_sigma, fps, labels, n_batches, &eps)
}

/// Mean probability over `n_samples` weight draws; draw `s` uses
/// `stream(seed, [s])`. Draws are evaluated in parallel and summed in order.
fn mean_prob(mu: &Network, rho: &Network, xs: &[&Fingerprint], n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    let per_draw: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let w = sample_weights(mu, rho, &sample_noise(mu, &mut stream(seed, &[s as u64])));
            xs.iter().map(|x| w.logit(x, None).map(sigmoid)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; xs.len()];
    for draw in &per_draw {
        for (t, p) in total.iter_mut().zip(draw) {
            *t += p;
        }
    }
    Ok(total.into_iter().map(|t| t / n_samples as f64).collect())
}

pub fn predict_bnn_all(m: &BnnModel, xs: &[&Fingerprint], n_samples: usize) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParams("n_samples must be positive".into()));
    }
    mean_prob(&m.mu, &m.rho, xs, n_samples, m.infer_seed)
}

pub fn predict_bnn(m: &BnnModel, x: &Fingerprint, n_samples: usize) -> Result<f64> {
    Ok(predict_bnn_all(m, &[x], n_samples)?[0])
}

struct BnnTrainer<'a> {
    mu: Network,
    rho: Network,
    adam: Adam,
    config: &'a BnnConfig,
    n_batches: usize,
    valid_seed: u64,
    train: &'a Samples<'a>,
    valid: &'a Samples<'a>,
}

impl EpochModel for BnnTrainer<'_> {
    type Snapshot = (Network, Network);

    fn train_batch(&mut self, batch: &[usize], lr: f64, rng: &mut StreamRng) -> Result<()> {
        let fps: Vec<&Fingerprint> = batch.iter().map(|&i| self.train.fps[i]).collect();
        let labels: Vec<bool> = batch.iter().map(|&i| self.train.labels[i]).collect();
        let n = self.config.n_train_samples;
        let (_, mut grad) = elbo_loss(&self.mu, &self.rho, self.config.prior_sigma, &fps, &labels, self.n_batches, rng)?;
        for _ in 1..n {
            let (_, g) = elbo_loss(&self.mu, &self.rho, self.config.prior_sigma, &fps, &labels, self.n_batches, rng)?;
            for (a, b) in [(&mut grad.mu, &g.mu), (&mut grad.rho, &g.rho)] {
                for (ta, tb) in a.tensors_mut().into_iter().zip(b.tensors()) {
                    for (x, y) in ta.iter_mut().zip(tb) {
                        *x += y;
                    }
                }
            }
        }
        if n > 1 {
            let inv = 1.0 / n as f64;
            for t in grad.mu.tensors_mut().into_iter().chain(grad.rho.tensors_mut()) {
                t.iter_mut().for_each(|x| *x *= inv);
            }
        }
        let params: Vec<&mut [f64]> = self.mu.tensors_mut().into_iter().chain(self.rho.tensors_mut()).collect();
        let grads: Vec<&[f64]> = grad.mu.tensors().into_iter().chain(grad.rho.tensors()).collect();
        self.adam.step(params, grads, lr);
        Ok(())
    }

    fn valid_loss(&self) -> Result<f64> {
        let probs = mean_prob(&self.mu, &self.rho, &self.valid.fps, self.config.n_valid_samples, self.valid_seed)?;
        bce_loss(&probs, &self.valid.labels)
    }

    fn snapshot(&self) -> (Network, Network) {
        (self.mu.clone(), self.rho.clone())
    }
}

/// Bayes-by-Backprop: Adam on `(mu, rho)` with early stopping on the BCE of
/// the sample-averaged validation prediction.
pub fn train_bnn(train: &Samples<'_>, valid: &Samples<'_>, config: &BnnConfig) -> Result<BnnModel> {
    config.validate()?;
    let mlp = &config.mlp;
    check_training_inputs(train, valid, mlp.input_dim)?;
    let sizes = mlp.layer_sizes();
    let mu = Network::he_uniform(&sizes, &mut stream(mlp.seed, &[STREAM_INIT]));
    let mut rho = mu.clone();
    rho.fill(config.rho_init);
    let lens: Vec<usize> = mu.tensors().iter().chain(rho.tensors().iter()).map(|t| t.len()).collect();
    let mut trainer = BnnTrainer {
        mu,
        rho,
        adam: Adam::new(&lens),
        config,
        n_batches: train.len().div_ceil(mlp.batch_size),
        valid_seed: crate::rng::derive_seed(mlp.seed, &[STREAM_VALID]),
        train,
        valid,
    };
    let fit = fit_epochs(
        &mut trainer,
        train.len(),
        mlp,
        &mut stream(mlp.seed, &[STREAM_SHUFFLE]),
        &mut stream(mlp.seed, &[STREAM_NOISE]),
    )?;
    let (mu, rho) = fit.best;
    let model = BnnModel {
        config: config.clone(),
        mu,
        rho,
        best_epoch: fit.best_epoch,
        valid_bce_at_best: fit.valid_at_best,
        history: fit.history,
        infer_seed: crate::rng::derive_seed(mlp.seed, &[4]),
    };
    model.check()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::train_mlp;
    use rand::Rng;

    fn small_mlp(input: usize) -> MlpConfig {
        MlpConfig {
            input_dim: input,
            hidden_dim: 5,
            n_hidden_layers: 2,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            batch_size: 8,
            ..Default::default()
        }
    }

    fn random_params(seed: u64, sizes: &[usize]) -> (Network, Network) {
        let mut rng = stream(seed, &[]);
        let mu = Network::he_uniform(sizes, &mut rng);
        let mut rho = mu.clone();
        for t in rho.tensors_mut() {
            t.iter_mut().for_each(|r| *r = rng.random_range(-4.0..1.0));
        }
        (mu, rho)
    }

    #[test]
    fn kl_zero_for_matching_prior() {
        let mut mu = Network::zeros(&[3, 2, 1]);
        let mut rho = mu.clone();
        let rho_val = (1.3f64.exp() - 1.0).ln();
        rho.fill(rho_val);
        assert!(gaussian_kl(&mu, &rho, softplus(rho_val)).abs() < 1e-14);
        mu.layers[0].weights[0] = 0.1;
        assert!(gaussian_kl(&mu, &rho, softplus(rho_val)) > 0.0);
    }

    #[test]
    fn kl_single_scalar_weight_by_hand() {
        // one weight mu = 1 with sigma = sigma_p = 1; the bias contributes 0
        let mut mu = Network::zeros(&[1, 1]);
        mu.layers[0].weights[0] = 1.0;
        let mut rho = mu.clone();
        let one = (std::f64::consts::E - 1.0).ln();
        rho.fill(one);
        assert!((gaussian_kl(&mu, &rho, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_nonnegative_on_random_parameters() {
        for seed in 0..50 {
            let (mu, rho) = random_params(seed, &[6, 4, 1]);
            for p in [0.1, 1.0, 3.0] {
                assert!(gaussian_kl(&mu, &rho, p) > 0.0);
            }
        }
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let sizes = [10, 6, 4, 1];
        let (mu, rho) = random_params(7, &sizes);
        let mut rng = stream(8, &[]);
        let eps = sample_noise(&mu, &mut rng);
        let fps: Vec<Fingerprint> = (0..16)
            .map(|k| Fingerprint::from_indices(10, [k % 10, (3 * k + 2) % 10]).unwrap())
            .collect();
        let refs: Vec<&Fingerprint> = fps.iter().collect();
        let labels: Vec<bool> = (0..16).map(|k| k % 3 != 0).collect();
        let prior = 0.7;
        let n_batches = 3;
        let loss = |m: &Network, r: &Network| {
            elbo_loss_with_noise(m, r, prior, &refs, &labels, n_batches, &eps).unwrap().0
        };
        let (_, grad) = elbo_loss_with_noise(&mu, &rho, prior, &refs, &labels, n_batches, &eps).unwrap();
        let h = 1e-4;
        for which in 0..2 {
            let analytic = if which == 0 { &grad.mu } else { &grad.rho };
            for (t, g) in analytic.tensors().iter().enumerate() {
                let mut fd = vec![0.0; g.len()];
                for j in 0..g.len() {
                    let (mut mp, mut rp) = (mu.clone(), rho.clone());
                    let (mut mm, mut rm) = (mu.clone(), rho.clone());
                    if which == 0 {
                        mp.tensors_mut()[t][j] += h;
                        mm.tensors_mut()[t][j] -= h;
                    } else {
                        rp.tensors_mut()[t][j] += h;
                        rm.tensors_mut()[t][j] -= h;
                    }
                    fd[j] = (loss(&mp, &rp) - loss(&mm, &rm)) / (2.0 * h);
                }
                let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
                assert!(diff / norm < 1e-4, "tensor {t} ({}) relative error {}", ["mu", "rho"][which], diff / norm);
            }
        }
    }

    /// The four patterns of two bits, label = bit 0, each repeated. The KL
    /// term is weighted per batch, so the data must outweigh it.
    fn toy(reps: usize) -> (Vec<Fingerprint>, Vec<bool>) {
        let patterns = [vec![0usize], vec![0, 1], vec![], vec![1]];
        let mut fps = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..reps {
            for (k, ones) in patterns.iter().enumerate() {
                fps.push(Fingerprint::from_indices(2, ones.iter().copied()).unwrap());
                labels.push(k < 2);
            }
        }
        (fps, labels)
    }

    fn toy_mlp() -> MlpConfig {
        MlpConfig {
            max_epochs: 500,
            ..small_mlp(2)
        }
    }

    #[test]
    fn separable_toy_set_converges() {
        let (fps, labels) = toy(64);
        let data = Samples::new(fps.iter().collect(), labels);
        let cfg = BnnConfig {
            mlp: toy_mlp(),
            n_valid_samples: 20,
            ..Default::default()
        };
        let m = train_bnn(&data, &data, &cfg).unwrap();
        assert!(m.valid_bce_at_best < 0.2, "validation BCE {}", m.valid_bce_at_best);
        let again = train_bnn(&data, &data, &cfg).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn wide_prior_approaches_deterministic_fit() {
        let (fps, labels) = toy(64);
        let data = Samples::new(fps.iter().collect(), labels.clone());
        let det = train_mlp(&data, &data, &toy_mlp()).unwrap();
        let bnn = train_bnn(
            &data,
            &data,
            &BnnConfig {
                mlp: toy_mlp(),
                prior_sigma: 1e3,
                n_valid_samples: 20,
                ..Default::default()
            },
        )
        .unwrap();
        let xs: Vec<&Fingerprint> = fps.iter().collect();
        let b = bce_loss(&predict_bnn_all(&bnn, &xs, 100).unwrap(), &labels).unwrap();
        let d = bce_loss(&det.predict_all(&xs).unwrap(), &labels).unwrap();
        assert!((b - d).abs() < 0.05, "BNN {b} vs MLP {d}");
    }

    #[test]
    fn collapsed_posterior_equals_mean_network() {
        let (mu, _) = random_params(3, &[8, 4, 4, 1]);
        let mut rho = mu.clone();
        rho.fill(-1000.0);
        let m = BnnModel {
            config: BnnConfig {
                mlp: MlpConfig { input_dim: 8, hidden_dim: 4, ..Default::default() },
                ..Default::default()
            },
            mu: mu.clone(),
            rho,
            best_epoch: 0,
            valid_bce_at_best: 0.0,
            history: vec![],
            infer_seed: 1,
        };
        let x = Fingerprint::from_indices(8, [1, 6]).unwrap();
        let det = sigmoid(mu.logit(&x, None).unwrap());
        assert_eq!(predict_bnn(&m, &x, 1).unwrap(), det);
        assert!((predict_bnn(&m, &x, 100).unwrap() - det).abs() < 1e-15);
    }

    #[test]
    fn more_samples_reduce_estimator_variance() {
        let (mu, _) = random_params(5, &[8, 6, 1]);
        let mut rho = mu.clone();
        rho.fill(0.5);
        let mut m = BnnModel {
            config: BnnConfig {
                mlp: MlpConfig { input_dim: 8, hidden_dim: 6, n_hidden_layers: 1, ..Default::default() },
                ..Default::default()
            },
            mu,
            rho,
            best_epoch: 0,
            valid_bce_at_best: 0.0,
            history: vec![],
            infer_seed: 0,
        };
        let x = Fingerprint::from_indices(8, [0, 2, 5]).unwrap();
        let variance = |m: &mut BnnModel, n: usize| {
            let vals: Vec<f64> = (0..50)
                .map(|s| {
                    m.infer_seed = 1000 + s;
                    predict_bnn(m, &x, n).unwrap()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / 50.0;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0
        };
        let v1 = variance(&mut m, 1);
        let v100 = variance(&mut m, 100);
        assert!(v100 < v1, "{v100} !< {v1}");
        m.infer_seed = 3;
        assert_eq!(predict_bnn(&m, &x, 10).unwrap(), predict_bnn(&m, &x, 10).unwrap());
        let p = predict_bnn(&m, &x, 10).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}
