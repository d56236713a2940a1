#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprnet_core::nn::{Eval, Graph, Tape, Tensor};
use sprnet_core::oracle::ResponseChannel;
use sprnet_core::sprnet::*;

fn outputs(m: &Model, x: &Tensor, f: &Tensor) -> Vec<Tensor> {
    match m.forward(&mut Eval, x, f).unwrap() {
        Outputs::Mean(y) => vec![y],
        Outputs::Lognormal { alpha, beta } => vec![alpha, beta],
    }
}

#[test]
fn end_to_end_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let t_len = 300;
    let x: Vec<f64> = (0..t_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![1, t_len], x).unwrap();
    let f = Tensor::vector((0..15).map(|i| 0.1 * i as f64 - 0.7).collect());
    for mode in [Mode::Deterministic, Mode::Probabilistic] {
        let m = build_network(&NetworkConfig { mode, seed: 4, ..Default::default() }).unwrap();
        let base = outputs(&m, &x, &f);
        for _ in 0..20 {
            let t0 = rng.random_range(1..t_len);
            let mut x1 = x.clone();
            x1.data_mut()[t0] += rng.random_range(0.5..2.0);
            let pert = outputs(&m, &x1, &f);
            for (a, b) in base.iter().zip(&pert) {
                for c in 0..a.shape()[0] {
                    for t in 0..t0 {
                        assert_eq!(a.data()[c * t_len + t].to_bits(), b.data()[c * t_len + t].to_bits());
                    }
                }
                // the perturbation reaches the current step
                assert!((0..a.shape()[0]).any(|c| a.data()[c * t_len + t0] != b.data()[c * t_len + t0]));
            }
        }
    }
}

#[test]
fn receptive_field_is_4096() {
    let m = build_network(&NetworkConfig::default()).unwrap();
    let len = 4200;
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, len], (0..len).map(|i| (i as f64 * 0.01).cos()).collect()).unwrap());
    let f = tape.input(Tensor::vector(vec![0.2; 15]));
    let s = m.skip_sum(&mut tape, &x, &f).unwrap();
    let mut mask = Tensor::zeros(&[16, len]);
    for c in 0..16 {
        mask.data_mut()[c * len + len - 1] = 1.0;
    }
    let y = tape.mul_const(&s, &mask).unwrap();
    let l = tape.sum(&y);
    let g = tape.backward(l).unwrap();
    let dx = g.wrt(x).unwrap();
    let first = dx.data().iter().position(|v| *v != 0.0).unwrap();
    assert_eq!(len - first, 4096);
    assert_eq!(m.config.receptive_field(), 4096);
}

#[test]
fn probabilistic_loss_gradients_match_finite_differences() {
    let cfg = NetworkConfig {
        n_layers: 3,
        conv_filters: 3,
        lstm_hidden: 3,
        fc_hidden: 2,
        feature_indices: vec![0, 3, 12],
        channels: vec![ResponseChannel::DriftRatio, ResponseChannel::BearingDisp],
        mode: Mode::Probabilistic,
        seed: 8,
        ..Default::default()
    };
    let mut m = build_network(&cfg).unwrap();
    // nonzero biases so every parameter carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for p in m.params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let steps = 16;
    let x = Tensor::new(vec![1, steps], (0..steps).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let f = Tensor::vector(vec![0.4, -1.1, 0.7]);
    let y = Tensor::new(vec![2, steps], (0..2 * steps).map(|i| (i as f64 * 0.3).cos() * 0.8).collect()).unwrap();
    let eps = [1e-6, 1e-6];

    let loss_of = |m: &Model| {
        let Outputs::Lognormal { alpha, beta } = m.forward(&mut Eval, &x, &f).unwrap() else { panic!() };
        probabilistic_loss(&mut Eval, &alpha, &beta, &y, &eps, 1.0).unwrap().item()
    };
    let mut tape = Tape::new();
    let (xv, fv) = (tape.input(x.clone()), tape.input(f.clone()));
    let Outputs::Lognormal { alpha, beta } = m.forward(&mut tape, &xv, &fv).unwrap() else { panic!() };
    let l = probabilistic_loss(&mut tape, &alpha, &beta, &y, &eps, 1.0).unwrap();
    let grads = tape.backward(l).unwrap().params(m.n_params());

    let h = 1e-5;
    for i in 0..m.n_params() {
        let analytic = grads[i].as_ref().unwrap();
        let mut num = Vec::new();
        for j in 0..m.params[i].len() {
            let mut mp = m.clone();
            mp.params[i].data_mut()[j] += h;
            let up = loss_of(&mp);
            mp.params[i].data_mut()[j] -= 2.0 * h;
            num.push((up - loss_of(&mp)) / (2.0 * h));
        }
        let diff: f64 = analytic.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale <= 1e-4, "{}: rel {}", m.names[i], diff / scale);
    }
}

#[test]
fn predicted_moments_round_trip() {
    let cfg = NetworkConfig { n_layers: 4, mode: Mode::Probabilistic, seed: 1, ..Default::default() };
    let m = build_network(&cfg).unwrap();
    let gm = sprnet_core::gm::GroundMotion::new("g", 0.02, (0..120).map(|i| (i as f64 * 0.2).sin() * 0.3).collect()).unwrap();
    let Prediction::Probabilistic(p) = predict(&m, &gm, &[1.0; 15]).unwrap() else { panic!() };
    let (mu, sigma) = p.mu_sigma();
    for c in 0..4 {
        for t in 0..120 {
            let (a, b) = lognormal_params_to_moments(mu[c][t], sigma[c][t], p.alpha[c][t]);
            let a0 = p.alpha[c][t];
            if a0.abs() > 1e-8 {
                assert!((a - a0).abs() <= 1e-9 * a0.abs());
                assert!((b - p.beta[c][t]).abs() <= 1e-9 * p.beta[c][t]);
            }
        }
    }
}
