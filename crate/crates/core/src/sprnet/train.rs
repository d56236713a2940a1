use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{probabilistic_loss, EPS_Y};
use super::network::{build_network, is_gm_channel, Model, Outputs};
use super::{Mode, NetworkConfig, SprError};
use crate::nn::{adam_step, AdamState, Eval, Graph, Tape, Tensor};
use crate::oracle::Dataset;

/// Scaling applied to inputs and targets. Features are standardized; the
/// GM and each output channel are divided by their RMS over the training
/// set (no offset, so signs and zero are preserved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub gm_scale: f64,
    pub output_scale: Vec<f64>,
    pub fitted: bool,
}

fn rms<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    let r = if n == 0 { 0.0 } else { (s / n as f64).sqrt() };
    if r > 1e-12 {
        r
    } else {
        1.0
    }
}

impl Normalizer {
    pub fn identity(cfg: &NetworkConfig) -> Self {
        Normalizer {
            feature_mean: vec![0.0; cfg.feature_dim()],
            feature_std: vec![1.0; cfg.feature_dim()],
            gm_scale: 1.0,
            output_scale: vec![1.0; cfg.output_channels()],
            fitted: false,
        }
    }

    pub fn fit(examples: &[Example], cfg: &NetworkConfig) -> Self {
        let f = cfg.feature_dim();
        let n = examples.len().max(1) as f64;
        let mut mean = vec![0.0; f];
        for e in examples {
            for (m, x) in mean.iter_mut().zip(&e.features) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; f];
        for e in examples {
            for ((s, x), m) in std.iter_mut().zip(&e.features).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        let output_scale = (0..cfg.output_channels())
            .map(|c| rms(examples.iter().flat_map(|e| e.target[c].iter())))
            .collect();
        Normalizer {
            feature_mean: mean,
            feature_std: std,
            gm_scale: rms(examples.iter().flat_map(|e| e.gm.iter())),
            output_scale,
            fitted: true,
        }
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<(), SprError> {
        if self.feature_mean.len() != cfg.feature_dim()
            || self.feature_std.len() != cfg.feature_dim()
            || self.output_scale.len() != cfg.output_channels()
        {
            return Err(SprError::Config("normalizer does not match the network configuration".into()));
        }
        Ok(())
    }

    pub fn gm_input(&self, accel: &[f64]) -> Tensor {
        let x: Vec<f64> = accel.iter().map(|a| a / self.gm_scale).collect();
        Tensor::new(vec![1, x.len()], x).expect("row vector")
    }

    pub fn feature_input(&self, features: &[f64], cfg: &NetworkConfig) -> Result<Tensor, SprError> {
        if features.len() != cfg.feature_dim() {
            return Err(crate::nn::NnError::Shape(format!(
                "expected {} features, got {}",
                cfg.feature_dim(),
                features.len()
            ))
            .into());
        }
        Ok(Tensor::vector(
            features
                .iter()
                .zip(&self.feature_mean)
                .zip(&self.feature_std)
                .map(|((x, m), s)| (x - m) / s)
                .collect(),
        ))
    }

    pub fn target(&self, target: &[Vec<f64>]) -> Tensor {
        let t_len = target.first().map_or(0, Vec::len);
        let data = target
            .iter()
            .zip(&self.output_scale)
            .flat_map(|(row, s)| row.iter().map(move |v| v / s))
            .collect();
        Tensor::new(vec![target.len(), t_len], data).expect("rectangular target")
    }
}

/// One training pair in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Acceleration, g.
    pub gm: Vec<f64>,
    /// Selected bridge features.
    pub features: Vec<f64>,
    /// `[channel][step]`
    pub target: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl TrainingData {
    pub fn examples(ds: &Dataset, ids: &[usize], cfg: &NetworkConfig) -> Result<Vec<Example>, SprError> {
        ids.iter()
            .map(|&i| {
                let s = ds
                    .samples
                    .get(i)
                    .ok_or_else(|| SprError::Config(format!("split id {i} is outside the dataset")))?;
                let p = s.bridge.to_array();
                let target: Vec<Vec<f64>> = cfg.channels.iter().map(|&c| s.response.channel(c).to_vec()).collect();
                if target.iter().any(|t| t.len() != s.gm.len()) {
                    return Err(SprError::Config(format!("sample {i}: response and record lengths differ")));
                }
                Ok(Example { gm: s.gm.accel.clone(), features: cfg.feature_indices.iter().map(|&j| p[j]).collect(), target })
            })
            .collect()
    }

    pub fn from_dataset(ds: &Dataset, cfg: &NetworkConfig) -> Result<Self, SprError> {
        Ok(TrainingData {
            train: Self::examples(ds, &ds.split.train_ids, cfg)?,
            val: Self::examples(ds, &ds.split.val_ids, cfg)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight on the uncertainty loss in probabilistic mode.
    pub loss_blend: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 180, epochs: 1000, lr: 1e-4, loss_blend: 1.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SprError> {
        if self.batch_size == 0 {
            return Err(SprError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(SprError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=10.0).contains(&self.loss_blend) {
            return Err(SprError::Config(format!("loss_blend must lie in [0, 10], got {}", self.loss_blend)));
        }
        Ok(())
    }
}

/// Per-epoch losses in normalized units. Index 0 is epoch 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

struct Prepared {
    x: Tensor,
    feat: Tensor,
    y: Tensor,
}

fn prepare(model: &Model, ex: &[Example]) -> Result<Vec<Prepared>, SprError> {
    ex.iter()
        .map(|e| {
            if e.target.len() != model.config.output_channels() {
                return Err(SprError::Config("target channel count does not match the model".into()));
            }
            Ok(Prepared {
                x: model.normalizer.gm_input(&e.gm),
                feat: model.normalizer.feature_input(&e.features, &model.config)?,
                y: model.normalizer.target(&e.target),
            })
        })
        .collect()
}

fn sample_loss<G: Graph>(model: &Model, g: &mut G, p: &Prepared, eps: &[f64], w_u: f64) -> Result<G::V, SprError> {
    let x = g.input(p.x.clone());
    let f = g.input(p.feat.clone());
    Ok(match model.forward(g, &x, &f)? {
        Outputs::Mean(m) => g.mse(&m, &p.y)?,
        Outputs::Lognormal { alpha, beta } => probabilistic_loss(g, &alpha, &beta, &p.y, eps, w_u)?,
    })
}

fn mean_loss(model: &Model, data: &[Prepared], eps: &[f64], w_u: f64) -> Result<f64, SprError> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|p| sample_loss(model, &mut Eval, p, eps, w_u).map(|t| t.item()))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Trains on explicit example sets. Fits the normalizer first if the model
/// has none. Returns the validation-best weights.
pub fn train_on(model: Model, data: &TrainingData, cfg: &TrainConfig) -> Result<(Model, TrainHistory), SprError> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(SprError::Config("training and validation sets must be nonempty".into()));
    }
    let mut model = model;
    if !model.normalizer.fitted {
        model.normalizer = Normalizer::fit(&data.train, &model.config);
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }
    let train = prepare(&model, &data.train)?;
    let val = prepare(&model, &data.val)?;
    let eps: Vec<f64> = model.normalizer.output_scale.iter().map(|s| EPS_Y / s).collect();
    let w_u = cfg.loss_blend;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.params.clone();
    let mut best_val = f64::INFINITY;
    let n_params = model.n_params();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Option<Tensor>>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let l = sample_loss(&model, &mut tape, &train[i], &eps, w_u)?;
                    let loss = tape.value(&l).item();
                    let grads = tape.backward(l)?.params(n_params);
                    Ok((loss, grads))
                })
                .collect::<Result<_, SprError>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut total: Vec<Option<Tensor>> = vec![None; n_params];
            let mut batch_loss = 0.0;
            for (loss, grads) in results {
                batch_loss += loss;
                for (acc, g) in total.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        match acc {
                            Some(a) => a.add_assign(&g),
                            None => *acc = Some(g),
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(SprError::Divergence { epoch, loss: batch_loss * inv });
            }
            total.iter_mut().flatten().for_each(|g| g.scale_assign(inv));
            adam_step(&mut model.params, &total, &mut adam, cfg.lr)?;
            epoch_loss += batch_loss;
        }
        let val_loss = mean_loss(&model, &val, &eps, w_u)?;
        if !val_loss.is_finite() {
            return Err(SprError::Divergence { epoch, loss: val_loss });
        }
        history.train_loss.push(epoch_loss / train.len() as f64);
        history.val_loss.push(val_loss);
        if val_loss < best_val {
            best_val = val_loss;
            best.clone_from(&model.params);
            history.best_epoch = Some(epoch);
        }
    }
    model.params = best;
    Ok((model, history))
}

/// Trains on the train/validation split of a dataset.
pub fn train_model(model: Model, ds: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory), SprError> {
    let data = TrainingData::from_dataset(ds, &model.config)?;
    train_on(model, &data, cfg)
}

/// Builds the probabilistic model from a trained deterministic SPR-Net:
/// the GM convolution channel is copied and frozen, the first FC layer is
/// rebuilt for the selected features, the alpha head starts from the
/// deterministic head and the beta head is freshly initialized.
pub fn prepare_transfer(det: &Model, selected: &[usize]) -> Result<Model, SprError> {
    if det.config.baseline_lstm || det.config.mode != Mode::Deterministic {
        return Err(SprError::Config("transfer needs a deterministic SPR-Net".into()));
    }
    if selected.is_empty() {
        return Err(SprError::Config("feature selection is empty".into()));
    }
    let cfg = NetworkConfig { mode: Mode::Probabilistic, feature_indices: selected.to_vec(), ..det.config.clone() };
    let mut model = build_network(&cfg)?;
    for (i, name) in model.names.clone().iter().enumerate() {
        let source = name.strip_prefix("head.alpha.").map_or(name.clone(), |rest| format!("head.mean.{rest}"));
        if let Some(p) = det.param(&source) {
            if p.shape() == model.params[i].shape() {
                model.params[i] = p.clone();
            }
        }
        model.frozen[i] = is_gm_channel(name);
    }
    let mut norm = det.normalizer.clone();
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for &j in selected {
        let pos = det
            .config
            .feature_indices
            .iter()
            .position(|&k| k == j)
            .ok_or_else(|| SprError::Config(format!("feature {j} was not an input of the deterministic model")))?;
        mean.push(det.normalizer.feature_mean[pos]);
        std.push(det.normalizer.feature_std[pos]);
    }
    norm.feature_mean = mean;
    norm.feature_std = std;
    model.normalizer = norm;
    Ok(model)
}

pub fn transfer_probabilistic(
    det: &Model,
    selected: &[usize],
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), SprError> {
    let model = prepare_transfer(det, selected)?;
    train_model(model, ds, cfg)
}
