//! SPR-Net: gated fusion of a dilated causal convolution stack over the
//! ground motion with a fully connected channel over bridge features,
//! followed by recurrent heads. Also hosts the GM-only LSTM baseline.

mod loss;
mod network;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;
use crate::oracle::{ResponseChannel, N_PARAMS};

pub use loss::{
    gated_fusion, median_data_loss, nll_uncertainty_loss, probabilistic_loss, FusionWeights, EPS_Y,
};
pub use network::{build_network, column_height, median_history, predict, Model, Outputs, Prediction};
pub use train::{
    prepare_transfer, train_model, train_on, transfer_probabilistic, Example, Normalizer, TrainConfig, TrainHistory,
    TrainingData,
};

#[derive(Debug, Error)]
pub enum SprError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("degenerate lognormal mean: alpha = 0")]
    DegenerateMean,
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Probabilistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_layers: usize,
    pub conv_filters: usize,
    pub dilation_multiplier: usize,
    pub kernel_size: usize,
    pub fc_hidden: usize,
    /// Indices into the bridge parameter vector fed to the FC channel.
    pub feature_indices: Vec<usize>,
    pub channels: Vec<ResponseChannel>,
    pub mode: Mode,
    pub baseline_lstm: bool,
    pub lstm_hidden: usize,
    /// Units per stacked LSTM layer of the baseline.
    pub baseline_units: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_layers: 12,
            conv_filters: 16,
            dilation_multiplier: 2,
            kernel_size: 2,
            fc_hidden: 4,
            feature_indices: (0..N_PARAMS).collect(),
            channels: ResponseChannel::ALL.to_vec(),
            mode: Mode::Deterministic,
            baseline_lstm: false,
            lstm_hidden: 16,
            baseline_units: 32,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// GM-only baseline with the same layer count.
    pub fn baseline() -> Self {
        NetworkConfig { baseline_lstm: true, feature_indices: Vec::new(), ..Default::default() }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_indices.len()
    }

    pub fn output_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_multiplier.pow(layer as u32)
    }

    /// Input steps seen by one output step of the convolution stack.
    pub fn receptive_field(&self) -> usize {
        1 + (0..self.n_layers).map(|i| (self.kernel_size - 1) * self.dilation(i)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), SprError> {
        let bad = |m: &str| Err(SprError::Config(m.to_string()));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1");
        }
        if self.channels.is_empty() {
            return bad("at least one output channel is required");
        }
        if self.baseline_lstm {
            if self.baseline_units == 0 {
                return bad("baseline_units must be positive");
            }
            if self.mode != Mode::Deterministic {
                return bad("the LSTM baseline is deterministic only");
            }
            return Ok(());
        }
        if self.conv_filters == 0 || self.fc_hidden == 0 || self.lstm_hidden == 0 {
            return bad("conv_filters, fc_hidden and lstm_hidden must be positive");
        }
        if self.kernel_size == 0 || self.dilation_multiplier == 0 {
            return bad("kernel_size and dilation_multiplier must be positive");
        }
        if self.dilation_multiplier.checked_pow(self.n_layers as u32).is_none() {
            return bad("dilation overflows");
        }
        if self.feature_indices.is_empty() {
            return bad("feature_indices is empty");
        }
        let mut seen = [false; N_PARAMS];
        for &i in &self.feature_indices {
            if i >= N_PARAMS || seen[i] {
                return Err(SprError::Config(format!("feature index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Per-step lognormal response distribution, one row per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticPrediction {
    pub dt: f64,
    pub channels: Vec<ResponseChannel>,
    /// Signed mean, response units.
    pub alpha: Vec<Vec<f64>>,
    /// Standard deviation, response units.
    pub beta: Vec<Vec<f64>>,
}

impl ProbabilisticPrediction {
    pub fn len(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(mu, sigma)` per channel and step, flooring |alpha| at 1e-8.
    pub fn mu_sigma(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut mu = Vec::with_capacity(self.alpha.len());
        let mut sigma = Vec::with_capacity(self.alpha.len());
        for (a, b) in self.alpha.iter().zip(&self.beta) {
            let (m, s): (Vec<f64>, Vec<f64>) = a
                .iter()
                .zip(b)
                .map(|(&a, &b)| lognormal_moments_to_params(floor_alpha(a), b).expect("beta is positive"))
                .unzip();
            mu.push(m);
            sigma.push(s);
        }
        (mu, sigma)
    }

    /// Per-step median `exp(mu) sign(alpha)`.
    pub fn median(&self) -> Vec<Vec<f64>> {
        let (mu, _) = self.mu_sigma();
        mu.iter()
            .zip(&self.alpha)
            .map(|(m, a)| m.iter().zip(a).map(|(m, a)| m.exp() * sign(*a)).collect())
            .collect()
    }

    /// Quantile `exp(mu + z sigma) sign(alpha)` of the signed response.
    pub fn quantile_band(&self, z: f64) -> Vec<Vec<f64>> {
        let (mu, sigma) = self.mu_sigma();
        mu.iter()
            .zip(&sigma)
            .zip(&self.alpha)
            .map(|((m, s), a)| {
                m.iter().zip(s).zip(a).map(|((m, s), a)| (m + z * s).exp() * sign(*a)).collect()
            })
            .collect()
    }
}

pub(crate) fn sign(a: f64) -> f64 {
    if a < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn floor_alpha(a: f64) -> f64 {
    if a.abs() < 1e-8 {
        1e-8 * sign(a)
    } else {
        a
    }
}

/// Moment matching of `|X| ~ LogNormal(mu, sigma)` to mean `|alpha|` and
/// standard deviation `beta`.
pub fn lognormal_moments_to_params(alpha: f64, beta: f64) -> Result<(f64, f64), SprError> {
    if alpha == 0.0 {
        return Err(SprError::DegenerateMean);
    }
    if !(beta > 0.0) {
        return Err(SprError::Config(format!("beta must be positive, got {beta}")));
    }
    let a2 = alpha * alpha;
    let r = beta * beta / a2;
    let mu = a2.ln() - 0.5 * (a2 + beta * beta).ln();
    Ok((mu, r.ln_1p().sqrt()))
}

/// Inverse of [`lognormal_moments_to_params`] for a given sign.
pub fn lognormal_params_to_moments(mu: f64, sigma: f64, sign_of_alpha: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let mean = (mu + 0.5 * s2).exp();
    (mean * sign(sign_of_alpha), mean * s2.exp_m1().sqrt())
}

/// One trajectory `x_t = exp(mu_t + sigma_t phi_t) sign(alpha_t)` with
/// i.i.d. standard normal `phi_t`, per channel.
pub fn sample_response_trajectory(pred: &ProbabilisticPrediction, seed: u64) -> Vec<Vec<f64>> {
    let (mu, sigma) = pred.mu_sigma();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mu.iter()
        .zip(&sigma)
        .zip(&pred.alpha)
        .map(|((m, s), a)| {
            m.iter()
                .zip(s)
                .zip(a)
                .map(|((m, s), a)| {
                    let phi: f64 = StandardNormal.sample(&mut rng);
                    (m + s * phi).exp() * sign(*a)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_matching_examples() {
        let (mu, s) = lognormal_moments_to_params(1.0, 1.0).unwrap();
        assert!((mu + 0.5f64.ln().abs() * 0.5).abs() < 1e-12);
        assert!((mu - -0.34657359).abs() < 1e-8 && (s - 0.83255461).abs() < 1e-8);
        let (mu, s) = lognormal_moments_to_params(-2.0, 1.0).unwrap();
        assert!((mu - 0.58157540).abs() < 1e-8 && (s - 0.47238073).abs() < 1e-8);
        let (mu, s) = lognormal_moments_to_params(1.0, 1e-9).unwrap();
        assert!(mu.abs() < 1e-15 && s < 1e-8);
        assert!(matches!(lognormal_moments_to_params(0.0, 1.0), Err(SprError::DegenerateMean)));
        assert!(lognormal_moments_to_params(1.0, 0.0).is_err());
    }

    #[test]
    fn moments_round_trip() {
        for &(a, b) in &[(1.0, 1.0), (-2.0, 0.3), (0.01, 0.5), (-350.0, 20.0)] {
            let (mu, s) = lognormal_moments_to_params(a, b).unwrap();
            let (a2, b2) = lognormal_params_to_moments(mu, s, a);
            assert!((a2 - a).abs() <= 1e-9 * a.abs());
            assert!((b2 - b).abs() <= 1e-9 * b);
        }
    }

    fn pred(alpha: Vec<f64>, beta: Vec<f64>) -> ProbabilisticPrediction {
        ProbabilisticPrediction {
            dt: 0.01,
            channels: vec![ResponseChannel::DriftRatio],
            alpha: vec![alpha],
            beta: vec![beta],
        }
    }

    #[test]
    fn zero_spread_samples_the_median() {
        let p = pred(vec![2.0, -3.0, 0.5], vec![1e-300, 1e-300, 1e-300]);
        let x = sample_response_trajectory(&p, 3);
        assert_eq!(x, p.median());
        assert!((x[0][1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn samples_carry_sign_and_mean() {
        let n = 100_000;
        let p = pred(vec![1.5; n], vec![1.0; n]);
        let x = sample_response_trajectory(&p, 11);
        assert!(x[0].iter().all(|v| *v > 0.0));
        let mean = x[0].iter().sum::<f64>() / n as f64;
        assert!((mean - 1.5).abs() / 1.5 < 0.01, "mean {mean}");

        let q = pred(vec![-0.7; 1000], vec![0.4; 1000]);
        assert!(sample_response_trajectory(&q, 1)[0].iter().all(|v| *v < 0.0));
        assert_eq!(sample_response_trajectory(&q, 1), sample_response_trajectory(&q, 1));
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(NetworkConfig::default().receptive_field(), 4096);
        let c = NetworkConfig { n_layers: 3, kernel_size: 3, ..Default::default() };
        assert_eq!(c.receptive_field(), 1 + 2 * (1 + 2 + 4));
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::default().validate().is_ok());
        assert!(NetworkConfig::baseline().validate().is_ok());
        for bad in [
            NetworkConfig { n_layers: 0, ..Default::default() },
            NetworkConfig { feature_indices: vec![], ..Default::default() },
            NetworkConfig { feature_indices: vec![1, 1], ..Default::default() },
            NetworkConfig { feature_indices: vec![15], ..Default::default() },
            NetworkConfig { channels: vec![], ..Default::default() },
            NetworkConfig { mode: Mode::Probabilistic, ..NetworkConfig::baseline() },
        ] {
            assert!(matches!(bad.validate(), Err(SprError::Config(_))), "{bad:?}");
        }
    }
}
