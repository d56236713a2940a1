//! Ground-motion records: parsing, synthesis, scaling and resampling.
//!
//! Accelerations are stored in units of g on a uniform time grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GmError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GmSource {
    Recorded,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundMotion {
    pub id: String,
    pub dt: f64,
    pub accel: Vec<f64>,
    pub scale_factor: f64,
    pub source: GmSource,
}

impl GroundMotion {
    pub fn new(id: impl Into<String>, dt: f64, accel: Vec<f64>) -> Result<Self, GmError> {
        let gm = GroundMotion {
            id: id.into(),
            dt,
            accel,
            scale_factor: 1.0,
            source: GmSource::Recorded,
        };
        gm.validate()?;
        Ok(gm)
    }

    pub fn validate(&self) -> Result<(), GmError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(GmError::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if self.accel.is_empty() {
            return Err(GmError::Domain("record has no samples".into()));
        }
        if let Some(i) = self.accel.iter().position(|a| !a.is_finite()) {
            return Err(GmError::Domain(format!("non-finite sample at index {i}")));
        }
        if !(self.scale_factor > 0.0) {
            return Err(GmError::Domain("scale factor must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.accel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accel.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.accel.len() as f64
    }
}

/// Parses the text record format: a `dt=<float> n=<int> [unit=g]` header
/// followed by `n` lines holding one acceleration value each.
pub fn parse_gm_record(id: &str, text: &str) -> Result<GroundMotion, GmError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(GmError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;

    let mut dt = None;
    let mut n = None;
    for tok in header.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(|| GmError::Parse {
            line: 1,
            msg: format!("malformed header token '{tok}'"),
        })?;
        match key {
            "dt" => {
                dt = Some(val.parse::<f64>().map_err(|_| GmError::Parse {
                    line: 1,
                    msg: format!("bad dt '{val}'"),
                })?)
            }
            "n" => {
                n = Some(val.parse::<usize>().map_err(|_| GmError::Parse {
                    line: 1,
                    msg: format!("bad sample count '{val}'"),
                })?)
            }
            "unit" if val == "g" => {}
            "unit" => {
                return Err(GmError::Parse {
                    line: 1,
                    msg: format!("unsupported unit '{val}'"),
                })
            }
            _ => {
                return Err(GmError::Parse {
                    line: 1,
                    msg: format!("unknown header key '{key}'"),
                })
            }
        }
    }
    let dt = dt.ok_or(GmError::Parse { line: 1, msg: "header lacks dt".into() })?;
    let n = n.ok_or(GmError::Parse { line: 1, msg: "header lacks n".into() })?;
    if !(dt > 0.0) {
        return Err(GmError::Parse { line: 1, msg: "dt must be positive".into() });
    }

    let mut accel = Vec::with_capacity(n);
    let mut last_line = 1;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        last_line = line_no;
        if accel.len() == n {
            return Err(GmError::Parse {
                line: line_no,
                msg: format!("sample count mismatch: header says {n}, found more"),
            });
        }
        let v = trimmed.parse::<f64>().map_err(|_| GmError::Parse {
            line: line_no,
            msg: format!("non-numeric sample '{trimmed}'"),
        })?;
        if !v.is_finite() {
            return Err(GmError::Parse { line: line_no, msg: "non-finite sample".into() });
        }
        accel.push(v);
    }
    if accel.len() != n {
        return Err(GmError::Parse {
            line: last_line,
            msg: format!("sample count mismatch: header says {n}, found {}", accel.len()),
        });
    }
    let mut gm = GroundMotion::new(id, dt, accel).map_err(|e| GmError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    gm.source = GmSource::Recorded;
    Ok(gm)
}

/// Writes a record in the text format with 9 significant digits per sample.
pub fn write_gm_record(gm: &GroundMotion) -> String {
    let mut out = String::with_capacity(16 * gm.accel.len() + 32);
    writeln!(out, "dt={} n={} unit=g", gm.dt, gm.accel.len()).unwrap();
    for a in &gm.accel {
        writeln!(out, "{a:.8e}").unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticGmConfig {
    /// Filter natural frequency in Hz.
    pub corner_frequency: f64,
    /// Filter damping ratio.
    pub damping_like_bandwidth: f64,
    pub envelope_rise: f64,
    pub envelope_plateau: f64,
    pub envelope_decay_rate: f64,
    pub target_pga: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for StochasticGmConfig {
    fn default() -> Self {
        StochasticGmConfig {
            corner_frequency: 2.5,
            damping_like_bandwidth: 0.4,
            envelope_rise: 2.0,
            envelope_plateau: 5.0,
            envelope_decay_rate: 0.4,
            target_pga: 0.3,
            duration: 20.0,
            dt: 0.01,
            seed: 0,
        }
    }
}

impl StochasticGmConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), GmError> {
        let positive = [
            ("corner_frequency", self.corner_frequency),
            ("damping_like_bandwidth", self.damping_like_bandwidth),
            ("envelope_rise", self.envelope_rise),
            ("envelope_plateau", self.envelope_plateau),
            ("envelope_decay_rate", self.envelope_decay_rate),
            ("duration", self.duration),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(GmError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.target_pga >= 0.0) {
            return Err(GmError::Domain("target_pga must be non-negative".into()));
        }
        let steps = self.duration / self.dt;
        if (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
            return Err(GmError::Domain(format!(
                "duration/dt = {steps} is not a positive integer step count"
            )));
        }
        Ok(())
    }

    fn envelope(&self, t: f64) -> f64 {
        if t < self.envelope_rise {
            t / self.envelope_rise
        } else if t < self.envelope_rise + self.envelope_plateau {
            1.0
        } else {
            (-self.envelope_decay_rate * (t - self.envelope_rise - self.envelope_plateau)).exp()
        }
    }
}

/// Kanai-Tajimi filtered white noise under a trapezoidal-exponential
/// envelope, rescaled to the target PGA.
pub fn synthesize_gm(cfg: &StochasticGmConfig) -> Result<GroundMotion, GmError> {
    cfg.validate()?;
    let n = cfg.steps();
    let dt = cfg.dt;
    let wg = 2.0 * std::f64::consts::PI * cfg.corner_frequency;
    let zg = cfg.damping_like_bandwidth;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Filter x'' + 2 zg wg x' + wg^2 x = -w(t); output 2 zg wg x' + wg^2 x.
    // Average-acceleration Newmark with the noise held per step.
    let (gamma, beta) = (0.5, 0.25);
    let keff = wg * wg + gamma / (beta * dt) * 2.0 * zg * wg + 1.0 / (beta * dt * dt);
    let (mut x, mut v) = (0.0f64, 0.0f64);
    let mut a = 0.0f64;
    let mut accel = Vec::with_capacity(n);
    for i in 0..n {
        let w: f64 = StandardNormal.sample(&mut rng);
        let c = 2.0 * zg * wg;
        let rhs = -w
            + (x / (beta * dt * dt) + v / (beta * dt) + (0.5 / beta - 1.0) * a)
            + c * (gamma / (beta * dt) * x + (gamma / beta - 1.0) * v
                + dt * (gamma / (2.0 * beta) - 1.0) * a);
        let x_new = rhs / keff;
        let a_new = (x_new - x) / (beta * dt * dt) - v / (beta * dt) - (0.5 / beta - 1.0) * a;
        let v_new = v + dt * ((1.0 - gamma) * a + gamma * a_new);
        x = x_new;
        v = v_new;
        a = a_new;
        let t = i as f64 * dt;
        accel.push((c * v + wg * wg * x) * cfg.envelope(t));
    }

    let peak = accel.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if cfg.target_pga == 0.0 || peak == 0.0 {
        accel.iter_mut().for_each(|a| *a = 0.0);
    } else {
        let s = cfg.target_pga / peak;
        for a in accel.iter_mut() {
            *a *= s;
        }
        // Pin the peak sample so max|a| equals the target exactly.
        if let Some(k) = accel
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
        {
            accel[k] = cfg.target_pga.copysign(accel[k]);
        }
    }
    Ok(GroundMotion {
        id: format!("synthetic-{}", cfg.seed),
        dt,
        accel,
        scale_factor: 1.0,
        source: GmSource::Synthetic,
    })
}

pub fn scale_gm(gm: &GroundMotion, factor: f64) -> Result<GroundMotion, GmError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(GmError::Domain(format!("scale factor must be positive, got {factor}")));
    }
    Ok(GroundMotion {
        id: gm.id.clone(),
        dt: gm.dt,
        accel: gm.accel.iter().map(|a| a * factor).collect(),
        scale_factor: gm.scale_factor * factor,
        source: gm.source,
    })
}

/// Start-aligned window of `duration` seconds on a grid of spacing `dt`.
/// Linear interpolation; zero beyond the last original sample.
pub fn trim_resample(gm: &GroundMotion, duration: f64, dt: f64) -> Result<GroundMotion, GmError> {
    if !(duration > 0.0) || !(dt > 0.0) {
        return Err(GmError::Domain("duration and dt must be positive".into()));
    }
    let n_out = (duration / dt).round() as usize;
    let ratio = dt / gm.dt;
    let last = gm.accel.len() - 1;
    let accel = (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let k = pos.floor() as usize;
            if k > last {
                0.0
            } else if k == last {
                if pos == last as f64 {
                    gm.accel[last]
                } else {
                    0.0
                }
            } else {
                let frac = pos - k as f64;
                if frac == 0.0 {
                    gm.accel[k]
                } else {
                    gm.accel[k] + frac * (gm.accel[k + 1] - gm.accel[k])
                }
            }
        })
        .collect();
    Ok(GroundMotion {
        id: gm.id.clone(),
        dt,
        accel,
        scale_factor: gm.scale_factor,
        source: gm.source,
    })
}

pub fn peak_ground_acceleration(gm: &GroundMotion) -> Result<f64, GmError> {
    if gm.accel.is_empty() {
        return Err(GmError::Domain("empty record".into()));
    }
    Ok(gm.accel.iter().fold(0.0f64, |m, a| m.max(a.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(accel: Vec<f64>) -> GroundMotion {
        GroundMotion::new("t", 0.05, accel).unwrap()
    }

    #[test]
    fn parses_simple_record() {
        let gm = parse_gm_record("a", "dt=0.05 n=3 unit=g\n0.0\n0.1\n-0.1\n").unwrap();
        assert_eq!(gm.accel, vec![0.0, 0.1, -0.1]);
        assert_eq!(gm.dt, 0.05);
        assert_eq!(gm.scale_factor, 1.0);
    }

    #[test]
    fn count_mismatch_is_reported() {
        let err = parse_gm_record("a", "dt=0.05 n=2\n0.0\n0.1\n-0.1\n").unwrap_err();
        match err {
            GmError::Parse { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("mismatch"));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse_gm_record("a", "dt=0.05 n=3\n0.0\n"),
            Err(GmError::Parse { .. })
        ));
    }

    #[test]
    fn bad_sample_names_line() {
        let err = parse_gm_record("a", "dt=0.05 n=2\n0.0\nabc\n").unwrap_err();
        assert_eq!(err, GmError::Parse { line: 3, msg: "non-numeric sample 'abc'".into() });
        assert!(matches!(parse_gm_record("a", "dt=x n=2\n"), Err(GmError::Parse { line: 1, .. })));
        assert!(matches!(parse_gm_record("a", "n=2\n1\n2\n"), Err(GmError::Parse { line: 1, .. })));
    }

    #[test]
    fn zero_pga_gives_zero_record() {
        let cfg = StochasticGmConfig { target_pga: 0.0, ..Default::default() };
        let gm = synthesize_gm(&cfg).unwrap();
        assert!(gm.accel.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn synthesis_is_deterministic_and_hits_target() {
        let cfg = StochasticGmConfig { seed: 7, ..Default::default() };
        let a = synthesize_gm(&cfg).unwrap();
        let b = synthesize_gm(&cfg).unwrap();
        assert_eq!(a.accel.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.accel.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(peak_ground_acceleration(&a).unwrap(), 0.3);
        assert_eq!(a.len(), 2000);
    }

    #[test]
    fn scaling() {
        let g = rec(vec![0.1, -0.2]);
        assert_eq!(scale_gm(&g, 1.0).unwrap().accel, g.accel);
        let s = scale_gm(&g, 2.0).unwrap();
        assert_eq!(s.accel, vec![0.2, -0.4]);
        assert_eq!(s.scale_factor, 2.0);
        assert!(scale_gm(&g, 0.0).is_err());
        assert!(scale_gm(&g, -1.0).is_err());
    }

    #[test]
    fn trim_identity_and_padding() {
        let g = rec((0..1200).map(|i| (i as f64 * 0.01).sin()).collect());
        let same = trim_resample(&g, 60.0, 0.05).unwrap();
        assert_eq!(same.accel, g.accel);

        let short = rec(vec![0.1; 200]);
        let padded = trim_resample(&short, 60.0, 0.05).unwrap();
        assert_eq!(padded.len(), 1200);
        assert!(padded.accel[..200].iter().all(|&a| a == 0.1));
        assert!(padded.accel[200..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn downsampled_ramp_is_exact() {
        let g = GroundMotion::new("r", 0.01, (0..1000).map(|i| 0.5 + 0.02 * i as f64 * 0.01).collect()).unwrap();
        let d = trim_resample(&g, 9.0, 0.03).unwrap();
        for (i, a) in d.accel.iter().enumerate() {
            let t = i as f64 * 0.03;
            assert!((a - (0.5 + 0.02 * t)).abs() < 1e-12, "step {i}");
        }
    }

    #[test]
    fn pga_cases() {
        assert_eq!(peak_ground_acceleration(&rec(vec![0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(peak_ground_acceleration(&rec(vec![0.1, -0.4, 0.2])).unwrap(), 0.4);
        let empty = GroundMotion { accel: vec![], ..rec(vec![0.0]) };
        assert!(peak_ground_acceleration(&empty).is_err());
    }

    proptest! {
        #[test]
        fn write_parse_round_trip(samples in prop::collection::vec(-5.0f64..5.0, 1..60), dt in 0.001f64..0.1) {
            let g = GroundMotion::new("p", dt, samples).unwrap();
            let text = write_gm_record(&g);
            let back = parse_gm_record("p", &text).unwrap();
            prop_assert_eq!(back.dt, g.dt);
            for (a, b) in back.accel.iter().zip(&g.accel) {
                prop_assert!((a - b).abs() <= 5e-9 * b.abs().max(1e-300));
            }
            // stored precision is a fixed point of the writer
            prop_assert_eq!(write_gm_record(&back), text);
        }

        #[test]
        fn pga_scales_linearly(samples in prop::collection::vec(-1.0f64..1.0, 1..50), f in 1.0f64..3.0) {
            let g = rec(samples);
            let p = peak_ground_acceleration(&g).unwrap();
            let ps = peak_ground_acceleration(&scale_gm(&g, f).unwrap()).unwrap();
            prop_assert!((ps - f * p).abs() <= 1e-15 * (f * p).max(1e-300));
            let flipped = GroundMotion { accel: g.accel.iter().map(|a| -a).collect(), ..g.clone() };
            prop_assert_eq!(peak_ground_acceleration(&flipped).unwrap(), p);
        }

        #[test]
        fn resample_is_idempotent(samples in prop::collection::vec(-1.0f64..1.0, 2..80), dt in 0.005f64..0.1) {
            let g = GroundMotion::new("p", 0.02, samples).unwrap();
            let once = trim_resample(&g, 1.5, dt).unwrap();
            let twice = trim_resample(&once, 1.5, dt).unwrap();
            prop_assert_eq!(once.accel, twice.accel);
        }
    }
}
