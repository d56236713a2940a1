use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::OracleError;

pub const N_PARAMS: usize = 15;

/// Parameter names in storage/feature order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "L", "W_d", "H_c", "lambda", "rho_s", "f_c", "H_b", "K_p", "K_ft", "K_fr", "k_b", "mu_b",
    "delta", "m_s", "xi",
];

/// Structural descriptor of one two-span single-column bridge.
///
/// Units: L, W_d, H_c, H_b in m; rho_s and xi as fractions; f_c in MPa;
/// K_p and K_ft in kN/mm; K_fr in GN*m/rad; k_b in kN/m per metre of deck
/// width; delta in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct BridgeParameters {
    pub L: f64,
    pub W_d: f64,
    pub H_c: f64,
    pub lambda: f64,
    pub rho_s: f64,
    pub f_c: f64,
    pub H_b: f64,
    pub K_p: f64,
    pub K_ft: f64,
    pub K_fr: f64,
    pub k_b: f64,
    pub mu_b: f64,
    pub delta: f64,
    pub m_s: f64,
    pub xi: f64,
}

impl BridgeParameters {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.L, self.W_d, self.H_c, self.lambda, self.rho_s, self.f_c, self.H_b, self.K_p,
            self.K_ft, self.K_fr, self.k_b, self.mu_b, self.delta, self.m_s, self.xi,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, OracleError> {
        if v.len() != N_PARAMS {
            return Err(OracleError::Config(format!(
                "expected {N_PARAMS} bridge parameters, got {}",
                v.len()
            )));
        }
        Ok(BridgeParameters {
            L: v[0],
            W_d: v[1],
            H_c: v[2],
            lambda: v[3],
            rho_s: v[4],
            f_c: v[5],
            H_b: v[6],
            K_p: v[7],
            K_ft: v[8],
            K_fr: v[9],
            k_b: v[10],
            mu_b: v[11],
            delta: v[12],
            m_s: v[13],
            xi: v[14],
        })
    }

    /// Means of the bridge-class statistics.
    pub fn class_mean() -> Self {
        let stats = ParameterStatistics::bridge_class();
        let v: Vec<f64> = stats.entries.iter().map(|e| e.mean).collect();
        Self::from_slice(&v).expect("15 entries")
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        for (name, v) in PARAM_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(OracleError::Config(format!("{name} is not finite")));
            }
            // a closed seat gap is allowed
            let ok = if *name == "delta" { v >= 0.0 } else { v > 0.0 };
            if !ok {
                return Err(OracleError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda < 1.0 {
            return Err(OracleError::Config("slenderness must be >= 1".into()));
        }
        if !(self.rho_s < 0.06) {
            return Err(OracleError::Config("rho_s must lie in (0, 0.06)".into()));
        }
        if !(self.xi > 0.005 && self.xi < 0.10) {
            return Err(OracleError::Config("xi must lie in (0.005, 0.10)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marginal {
    Normal,
    Lognormal,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStat {
    pub name: String,
    pub distribution: Marginal,
    pub mean: f64,
    pub std: f64,
    pub low: f64,
    pub high: f64,
}

impl ParamStat {
    fn new(name: &str, distribution: Marginal, mean: f64, std: f64, low: f64, high: f64) -> Self {
        ParamStat { name: name.into(), distribution, mean, std, low, high }
    }

    /// Inverse CDF of the (untruncated) marginal, clamped to the bounds.
    pub fn quantile(&self, u: f64) -> f64 {
        let x = match self.distribution {
            Marginal::Normal => self.mean + self.std * std_normal_quantile(u),
            Marginal::Lognormal => {
                let s2 = (1.0 + (self.std / self.mean).powi(2)).ln();
                let mu = self.mean.ln() - 0.5 * s2;
                (mu + s2.sqrt() * std_normal_quantile(u)).exp()
            }
            Marginal::Uniform => {
                let half = self.std * 3f64.sqrt();
                self.mean - half + u * 2.0 * half
            }
        };
        x.clamp(self.low, self.high)
    }
}

fn std_normal_quantile(u: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterStatistics {
    pub entries: Vec<ParamStat>,
}

impl ParameterStatistics {
    /// Marginals of the pre-1971 two-span box-girder class, converted to the
    /// units of [`BridgeParameters`]. Truncation bounds are physical limits
    /// chosen wide enough not to distort the printed moments.
    pub fn bridge_class() -> Self {
        use Marginal::*;
        let e = vec![
            ParamStat::new("L", Lognormal, 31.78, 8.74, 5.0, 150.0),
            ParamStat::new("W_d", Lognormal, 9.78, 1.98, 3.0, 40.0),
            ParamStat::new("H_c", Lognormal, 6.63, 0.87, 2.5, 20.0),
            ParamStat::new("lambda", Lognormal, 4.30, 0.91, 1.2, 20.0),
            ParamStat::new("rho_s", Uniform, 0.0225, 0.0052, 0.001, 0.059),
            ParamStat::new("f_c", Normal, 29.03, 3.59, 10.0, 60.0),
            ParamStat::new("H_b", Lognormal, 2.19, 0.44, 0.5, 8.0),
            ParamStat::new("K_p", Lognormal, 0.125, 0.54, 1e-6, 1e3),
            ParamStat::new("K_ft", Normal, 245.78, 105.08, 5.0, 1000.0),
            ParamStat::new("K_fr", Normal, 6.8, 1.1, 0.5, 20.0),
            ParamStat::new("k_b", Lognormal, 908.0, 327.0, 50.0, 8000.0),
            ParamStat::new("mu_b", Normal, 0.30, 0.10, 0.01, 1.0),
            ParamStat::new("delta", Lognormal, 23.5, 12.5, 0.1, 300.0),
            ParamStat::new("m_s", Uniform, 1.05, 0.06, 0.5, 2.0),
            ParamStat::new("xi", Normal, 0.045, 0.0125, 0.0055, 0.0995),
        ];
        ParameterStatistics { entries: e }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        if self.entries.len() != N_PARAMS {
            return Err(OracleError::Config(format!(
                "expected {N_PARAMS} parameter statistics, got {}",
                self.entries.len()
            )));
        }
        for e in &self.entries {
            if !(e.std > 0.0) {
                return Err(OracleError::Config(format!("{}: std must be positive", e.name)));
            }
            if !(e.low < e.high) {
                return Err(OracleError::Config(format!("{}: empty truncation range", e.name)));
            }
            if e.distribution == Marginal::Lognormal && !(e.mean > 0.0) {
                return Err(OracleError::Config(format!("{}: lognormal mean must be positive", e.name)));
            }
        }
        Ok(())
    }
}

/// Latin hypercube quantiles: `n` rows by `dims` columns; each column holds
/// exactly one value in every stratum `[k/n, (k+1)/n)`.
pub fn lhs_quantiles(n: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        perm.shuffle(rng);
        for (i, row) in rows.iter_mut().enumerate() {
            let jitter: f64 = rng.random();
            row[j] = (perm[i] as f64 + jitter) / n as f64;
        }
    }
    rows
}

pub fn sample_bridge_portfolio(
    n: usize,
    stats: &ParameterStatistics,
    seed: u64,
) -> Result<Vec<BridgeParameters>, OracleError> {
    if n == 0 {
        return Err(OracleError::Config("portfolio size must be >= 1".into()));
    }
    stats.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = lhs_quantiles(n, N_PARAMS, &mut rng);
    q.iter()
        .map(|row| {
            let v: Vec<f64> = row
                .iter()
                .zip(&stats.entries)
                .map(|(&u, e)| e.quantile(u.clamp(1e-15, 1.0 - 1e-15)))
                .collect();
            BridgeParameters::from_slice(&v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_in_bounds() {
        let stats = ParameterStatistics::bridge_class();
        let p = sample_bridge_portfolio(1, &stats, 3).unwrap();
        assert_eq!(p.len(), 1);
        for (v, e) in p[0].to_array().iter().zip(&stats.entries) {
            assert!(*v >= e.low && *v <= e.high, "{}", e.name);
        }
        p[0].validate().unwrap();
    }

    #[test]
    fn strata_are_filled_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 257;
        let q = lhs_quantiles(n, N_PARAMS, &mut rng);
        for j in 0..N_PARAMS {
            let mut strata: Vec<usize> = q.iter().map(|r| (r[j] * n as f64).floor() as usize).collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn invalid_stats_rejected() {
        let mut s = ParameterStatistics::bridge_class();
        s.entries[0].std = 0.0;
        assert!(matches!(sample_bridge_portfolio(3, &s, 0), Err(OracleError::Config(_))));
        assert!(sample_bridge_portfolio(0, &ParameterStatistics::bridge_class(), 0).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let s = ParameterStatistics::bridge_class();
        assert_eq!(sample_bridge_portfolio(20, &s, 5).unwrap(), sample_bridge_portfolio(20, &s, 5).unwrap());
        assert_ne!(sample_bridge_portfolio(20, &s, 5).unwrap(), sample_bridge_portfolio(20, &s, 6).unwrap());
    }

    #[test]
    fn uniform_bounds_follow_sqrt3_rule() {
        let e = &ParameterStatistics::bridge_class().entries[13];
        assert!((e.quantile(0.0) - (1.05 - 0.06 * 3f64.sqrt())).abs() < 1e-12);
        assert!((e.quantile(1.0) - (1.05 + 0.06 * 3f64.sqrt())).abs() < 1e-12);
    }
}
