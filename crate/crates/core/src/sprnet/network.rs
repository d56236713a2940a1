use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{gated_fusion, FusionWeights};
use super::train::Normalizer;
use super::{Mode, NetworkConfig, ProbabilisticPrediction, SprError};
use crate::gm::GroundMotion;
use crate::nn::{Eval, Graph, NnError, Tensor, Unary};
use crate::oracle::{BridgeParameters, ResponseChannel, ResponseHistory};

/// Floor added to softplus so beta stays strictly positive.
pub(crate) const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HeadIds {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIds {
    pub fc_w: usize,
    pub fc_b: usize,
    pub filter_w: usize,
    pub filter_b: usize,
    pub gate_w: usize,
    pub gate_b: usize,
    pub cond_w: usize,
    pub cond_b: usize,
    pub skip_w: usize,
    pub skip_b: usize,
    pub res: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layout {
    Spr { input_w: usize, input_b: usize, layers: Vec<LayerIds>, heads: Vec<HeadIds> },
    Baseline { lstms: Vec<(usize, usize, usize)>, conv1: (usize, usize), conv2: (usize, usize) },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// `(fan_in, fan_out)`; `None` for biases.
    pub fans: Option<(usize, usize)>,
}

#[derive(Default)]
struct Registry {
    specs: Vec<ParamSpec>,
}

impl Registry {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize) -> usize {
        self.specs.push(ParamSpec { name, shape: shape.to_vec(), fans: Some((fan_in, fan_out)) });
        self.specs.len() - 1
    }

    fn bias(&mut self, name: String, n: usize) -> usize {
        self.specs.push(ParamSpec { name, shape: vec![n], fans: None });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) -> (usize, usize) {
        let w = self.weight(format!("{name}.w"), &[out, inp, k], inp * k, out * k);
        (w, self.bias(format!("{name}.b"), out))
    }

    fn lstm(&mut self, name: &str, inp: usize, h: usize) -> (usize, usize, usize) {
        let wi = self.weight(format!("{name}.w_ih"), &[4 * h, inp], inp, 4 * h);
        let wh = self.weight(format!("{name}.w_hh"), &[4 * h, h], h, 4 * h);
        (wi, wh, self.bias(format!("{name}.b"), 4 * h))
    }

    fn head(&mut self, name: &str, inp: usize, h: usize, out: usize) -> HeadIds {
        let (w_ih, w_hh, b) = self.lstm(&format!("{name}.lstm"), inp, h);
        let (w_out, b_out) = self.conv(&format!("{name}.out"), out, h, 1);
        HeadIds { w_ih, w_hh, b, w_out, b_out }
    }
}

pub(crate) fn head_names(mode: Mode) -> &'static [&'static str] {
    match mode {
        Mode::Deterministic => &["head.mean"],
        Mode::Probabilistic => &["head.alpha", "head.beta"],
    }
}

pub(crate) fn layout(cfg: &NetworkConfig) -> (Layout, Vec<ParamSpec>) {
    let mut r = Registry::default();
    let out = cfg.output_channels();
    if cfg.baseline_lstm {
        let u = cfg.baseline_units;
        let lstms = (0..cfg.n_layers).map(|i| r.lstm(&format!("lstm{i}"), if i == 0 { 1 } else { u }, u)).collect();
        let conv1 = r.conv("conv1", u, u, 2);
        let conv2 = r.conv("conv2", out, u, 2);
        return (Layout::Baseline { lstms, conv1, conv2 }, r.specs);
    }
    let (c, fh, k) = (cfg.conv_filters, cfg.fc_hidden, cfg.kernel_size);
    let (input_w, input_b) = r.conv("input", c, 1, 1);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let p = format!("layer{i}");
        let fc_in = if i == 0 { cfg.feature_dim() } else { fh };
        let fc_w = r.weight(format!("{p}.fc.w"), &[fh, fc_in], fc_in, fh);
        let fc_b = r.bias(format!("{p}.fc.b"), fh);
        let (filter_w, filter_b) = r.conv(&format!("{p}.filter"), c, c, k);
        let (gate_w, gate_b) = r.conv(&format!("{p}.gate"), c, c, k);
        let cond_w = r.weight(format!("{p}.cond.w"), &[c, fh], fh, c);
        let cond_b = r.bias(format!("{p}.cond.b"), c);
        let (skip_w, skip_b) = r.conv(&format!("{p}.skip"), c, c, 1);
        let res = (i + 1 < cfg.n_layers).then(|| r.conv(&format!("{p}.res"), c, c, 1));
        layers.push(LayerIds { fc_w, fc_b, filter_w, filter_b, gate_w, gate_b, cond_w, cond_b, skip_w, skip_b, res });
    }
    let heads = head_names(cfg.mode).iter().map(|n| r.head(n, c, cfg.lstm_hidden, out)).collect();
    (Layout::Spr { input_w, input_b, layers, heads }, r.specs)
}

/// Parameters of the GM channel kept fixed by transfer learning.
pub(crate) fn is_gm_channel(name: &str) -> bool {
    name.starts_with("input.") || name.contains(".filter.") || name.contains(".gate.")
}

/// A built network: configuration, parameters and data scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub frozen: Vec<bool>,
    pub normalizer: Normalizer,
    pub(crate) layout: Layout,
}

pub(crate) fn init_params(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|s| match s.fans {
            None => Tensor::zeros(&s.shape),
            Some((fi, fo)) => {
                let lim = (6.0 / (fi + fo) as f64).sqrt();
                let n: usize = s.shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-lim..lim)).collect();
                Tensor::new(s.shape.clone(), data).expect("shape from spec")
            }
        })
        .collect()
}

pub fn build_network(cfg: &NetworkConfig) -> Result<Model, SprError> {
    cfg.validate()?;
    let (layout, specs) = layout(cfg);
    let params = init_params(&specs, cfg.seed);
    Ok(Model {
        config: cfg.clone(),
        names: specs.into_iter().map(|s| s.name).collect(),
        frozen: vec![false; params.len()],
        normalizer: Normalizer::identity(cfg),
        params,
        layout,
    })
}

/// Network outputs in normalized units, `[channels x T]`.
pub enum Outputs<V> {
    Mean(V),
    Lognormal { alpha: V, beta: V },
}

impl Model {
    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_parts(
        config: NetworkConfig,
        params: Vec<(String, Tensor)>,
        frozen: Vec<bool>,
        normalizer: Normalizer,
    ) -> Result<Model, SprError> {
        config.validate()?;
        let (layout, specs) = layout(&config);
        if params.len() != specs.len() || frozen.len() != specs.len() {
            return Err(SprError::Config(format!(
                "configuration needs {} parameters, got {} (frozen mask {})",
                specs.len(),
                params.len(),
                frozen.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(&params) {
            if spec.name != *name || spec.shape != t.shape() {
                return Err(SprError::Config(format!(
                    "parameter {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        normalizer.check(&config)?;
        let (names, params) = params.into_iter().unzip();
        Ok(Model { config, names, params, frozen, normalizer, layout })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    fn p<G: Graph>(&self, g: &mut G, id: usize) -> G::V {
        g.param(id, &self.params[id], !self.frozen[id])
    }

    /// Sum of skip outputs `[C x T]` of the SPR-Net convolution stack.
    pub fn skip_sum<G: Graph>(&self, g: &mut G, x: &G::V, feat: &G::V) -> Result<G::V, SprError> {
        let Layout::Spr { input_w, input_b, layers, .. } = &self.layout else {
            return Err(SprError::Config("the LSTM baseline has no convolution stack".into()));
        };
        let (iw, ib) = (self.p(g, *input_w), self.p(g, *input_b));
        let mut h = g.conv1d(x, &iw, Some(&ib), 1)?;
        let mut b = feat.clone();
        let mut skip: Option<G::V> = None;
        for (k, l) in layers.iter().enumerate() {
            let (fw, fb) = (self.p(g, l.fc_w), self.p(g, l.fc_b));
            let pre = g.dense(&fw, &b, &fb)?;
            b = g.tanh(&pre);
            let ids = [l.filter_w, l.filter_b, l.gate_w, l.gate_b, l.cond_w, l.cond_b];
            let [f, fb, gw, gb, cw, cb] = ids.map(|id| self.p(g, id));
            let w = FusionWeights {
                filter: &f,
                filter_bias: Some(&fb),
                gate: &gw,
                gate_bias: Some(&gb),
                cond: &cw,
                cond_bias: &cb,
            };
            let u = gated_fusion(g, &h, &b, &w, self.config.dilation(k))?;
            let (sw, sb) = (self.p(g, l.skip_w), self.p(g, l.skip_b));
            let s = g.conv1d(&u, &sw, Some(&sb), 1)?;
            skip = Some(match skip {
                None => s,
                Some(acc) => g.add(&acc, &s)?,
            });
            if let Some((rw, rb)) = l.res {
                let (rw, rb) = (self.p(g, rw), self.p(g, rb));
                let r = g.conv1d(&u, &rw, Some(&rb), 1)?;
                h = g.add(&h, &r)?;
            }
        }
        Ok(skip.expect("at least one layer"))
    }

    fn head<G: Graph>(&self, g: &mut G, ids: &HeadIds, s: &G::V) -> Result<G::V, NnError> {
        let [wi, wh, b, wo, bo] = [ids.w_ih, ids.w_hh, ids.b, ids.w_out, ids.b_out].map(|id| self.p(g, id));
        let h = g.lstm(s, &wi, &wh, &b)?;
        g.conv1d(&h, &wo, Some(&bo), 1)
    }

    /// Forward pass on normalized inputs: `x` is `[1 x T]`, `feat` is `[F]`.
    pub fn forward<G: Graph>(&self, g: &mut G, x: &G::V, feat: &G::V) -> Result<Outputs<G::V>, SprError> {
        let t_len = g.value(x).shape().get(1).copied().unwrap_or(0);
        if g.value(x).shape() != [1, t_len] || t_len == 0 {
            return Err(NnError::Shape(format!("ground motion input must be [1 x T], got {:?}", g.value(x).shape())).into());
        }
        match &self.layout {
            Layout::Baseline { lstms, conv1, conv2 } => {
                let mut h = x.clone();
                for &(wi, wh, b) in lstms {
                    let [wi, wh, b] = [wi, wh, b].map(|id| self.p(g, id));
                    h = g.lstm(&h, &wi, &wh, &b)?;
                }
                let (w1, b1) = (self.p(g, conv1.0), self.p(g, conv1.1));
                let c = g.conv1d(&h, &w1, Some(&b1), 1)?;
                let c = g.tanh(&c);
                let (w2, b2) = (self.p(g, conv2.0), self.p(g, conv2.1));
                Ok(Outputs::Mean(g.conv1d(&c, &w2, Some(&b2), 1)?))
            }
            Layout::Spr { heads, .. } => {
                if g.value(feat).shape() != [self.config.feature_dim()] {
                    return Err(NnError::Shape(format!(
                        "expected {} features, got shape {:?}",
                        self.config.feature_dim(),
                        g.value(feat).shape()
                    ))
                    .into());
                }
                let s = self.skip_sum(g, x, feat)?;
                match self.config.mode {
                    Mode::Deterministic => Ok(Outputs::Mean(self.head(g, &heads[0], &s)?)),
                    Mode::Probabilistic => {
                        let alpha = self.head(g, &heads[0], &s)?;
                        let raw = self.head(g, &heads[1], &s)?;
                        let beta = g.unary(&raw, Unary::Softplus);
                        let beta = g.add_scalar(&beta, BETA_FLOOR);
                        Ok(Outputs::Lognormal { alpha, beta })
                    }
                }
            }
        }
    }

    /// Plain forward pass in response units: `[channels][T]` mean, or
    /// alpha and beta.
    pub fn evaluate(&self, accel: &[f64], features: &[f64]) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>), SprError> {
        let x = self.normalizer.gm_input(accel);
        let f = self.normalizer.feature_input(features, &self.config)?;
        let out = self.forward(&mut Eval, &x, &f)?;
        let unscale = |t: Tensor, floor: f64| -> Vec<Vec<f64>> {
            let t_len = t.shape()[1];
            (0..t.shape()[0])
                .map(|c| {
                    let s = self.normalizer.output_scale[c];
                    t.data()[c * t_len..(c + 1) * t_len].iter().map(|v| (v * s).max(floor)).collect()
                })
                .collect()
        };
        Ok(match out {
            Outputs::Mean(m) => (unscale(m, f64::NEG_INFINITY), None),
            Outputs::Lognormal { alpha, beta } => (unscale(alpha, f64::NEG_INFINITY), Some(unscale(beta, f64::MIN_POSITIVE))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Deterministic(ResponseHistory),
    Probabilistic(ProbabilisticPrediction),
}

/// Pure forward pass. `features` holds the raw values of the model's
/// feature indices.
/// Column height used to turn drift into displacement: the H_c feature when
/// the model sees it, the class mean otherwise.
pub fn column_height(model: &Model, features: &[f64]) -> f64 {
    model
        .config
        .feature_indices
        .iter()
        .position(|&i| i == 2)
        .map_or(BridgeParameters::class_mean().H_c, |p| features[p])
}

/// Response history of the per-step median of a probabilistic prediction.
/// Channels the model does not predict are zero.
pub fn median_history(model: &Model, p: &ProbabilisticPrediction, features: &[f64]) -> ResponseHistory {
    let mut ch: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; p.len()]);
    for (c, v) in p.channels.iter().zip(p.median()) {
        let slot = ResponseChannel::ALL.iter().position(|a| a == c).expect("known channel");
        ch[slot] = v;
    }
    let [d, cf, bd, bf] = ch;
    ResponseHistory::from_channels(p.dt, d, cf, bd, bf, column_height(model, features))
}

pub fn predict(model: &Model, gm: &GroundMotion, features: &[f64]) -> Result<Prediction, SprError> {
    let (mean, beta) = model.evaluate(&gm.accel, features)?;
    let cfg = &model.config;
    match beta {
        None => {
            let t_len = gm.len();
            let mut ch: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; t_len]);
            for (c, v) in cfg.channels.iter().zip(mean) {
                let slot = ResponseChannel::ALL.iter().position(|a| a == c).expect("known channel");
                ch[slot] = v;
            }
            let h_c = column_height(model, features);
            let [drift, col_f, brg_d, brg_f] = ch;
            Ok(Prediction::Deterministic(ResponseHistory::from_channels(gm.dt, drift, col_f, brg_d, brg_f, h_c)))
        }
        Some(beta) => Ok(Prediction::Probabilistic(ProbabilisticPrediction {
            dt: gm.dt,
            channels: cfg.channels.clone(),
            alpha: mean,
            beta,
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;

    fn small(mode: Mode) -> NetworkConfig {
        NetworkConfig { n_layers: 3, conv_filters: 4, lstm_hidden: 3, mode, seed: 5, ..Default::default() }
    }

    fn gm(n: usize) -> GroundMotion {
        GroundMotion::new("t", 0.02, (0..n).map(|i| (i as f64 * 0.3).sin() * 0.2).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_network(&NetworkConfig::default()).unwrap();
        let b = build_network(&NetworkConfig::default()).unwrap();
        assert_eq!(a.params, b.params);
        let c = build_network(&NetworkConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.params, c.params);
        assert!(a.names.iter().zip(&a.params).all(|(n, p)| !n.ends_with(".b") || p.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn initialization_bounds() {
        let m = build_network(&NetworkConfig::default()).unwrap();
        let w = m.param("layer3.filter.w").unwrap();
        let lim = (6.0f64 / (16.0 * 2.0 * 2.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= lim));
        assert!(w.data().iter().any(|v| v.abs() > 0.8 * lim));
        assert!(m.param("layer11.res.w").is_none());
        assert_eq!(m.param("layer0.fc.w").unwrap().shape(), &[4, 15]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let m = build_network(&small(Mode::Deterministic)).unwrap();
        let z = GroundMotion::new("z", 0.02, vec![0.0; 40]).unwrap();
        let Prediction::Deterministic(r) = predict(&m, &z, &[0.0; 15]).unwrap() else { panic!() };
        assert!(r.drift_ratio.iter().chain(&r.bearing_force).all(|v| *v == 0.0));
    }

    #[test]
    fn predict_is_pure() {
        let m = build_network(&small(Mode::Probabilistic)).unwrap();
        let f: Vec<f64> = (0..15).map(|i| i as f64 * 0.1).collect();
        let a = predict(&m, &gm(64), &f).unwrap();
        let b = predict(&m, &gm(64), &f).unwrap();
        assert_eq!(a, b);
        let Prediction::Probabilistic(p) = a else { panic!() };
        assert!(p.beta.iter().flatten().all(|b| *b > 0.0));
        assert!(predict(&m, &gm(64), &f[..3]).is_err());
    }

    #[test]
    fn tape_and_eval_agree() {
        let m = build_network(&small(Mode::Probabilistic)).unwrap();
        let x = Tensor::new(vec![1, 30], gm(30).accel).unwrap();
        let f = Tensor::vector(vec![0.3; 15]);
        let Outputs::Lognormal { alpha: a1, .. } = m.forward(&mut Eval, &x, &f).unwrap() else { panic!() };
        let mut tape = Tape::new();
        let (xv, fv) = (tape.input(x), tape.input(f));
        let Outputs::Lognormal { alpha: a2, .. } = m.forward(&mut tape, &xv, &fv).unwrap() else { panic!() };
        assert_eq!(&a1, tape.value(&a2));
    }

    #[test]
    fn baseline_ignores_features() {
        let m = build_network(&NetworkConfig { n_layers: 2, baseline_units: 5, ..NetworkConfig::baseline() }).unwrap();
        let Prediction::Deterministic(r) = predict(&m, &gm(50), &[]).unwrap() else { panic!() };
        assert_eq!(r.len(), 50);
        assert!(r.drift_ratio.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let m = build_network(&small(Mode::Deterministic)).unwrap();
        let parts: Vec<(String, Tensor)> = m.names.iter().cloned().zip(m.params.iter().cloned()).collect();
        let back = Model::from_parts(m.config.clone(), parts.clone(), m.frozen.clone(), m.normalizer.clone()).unwrap();
        assert_eq!(back, m);
        let mut bad = parts;
        bad[3].1 = Tensor::zeros(&[1]);
        assert!(Model::from_parts(m.config.clone(), bad, m.frozen.clone(), m.normalizer.clone()).is_err());
    }
}
