//! Uncertainty-aware wrappers around the MLP core.

mod bnn;
mod ensemble;
mod mc_dropout;

pub use bnn::{
    elbo_loss, elbo_loss_with_noise, gaussian_kl, predict_bnn, predict_bnn_all, sample_noise, sample_weights, train_bnn,
    BnnConfig, BnnModel, ElboGrad,
};
pub use ensemble::{predict_ensemble, predict_ensemble_all, train_ensemble, DeepEnsemble, DEFAULT_MEMBERS};
pub use mc_dropout::{mc_pass_probs, predict_mc_dropout, predict_mc_dropout_all, McDropoutModel, DEFAULT_PASSES};
