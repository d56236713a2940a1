use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::assemble_reduced_model;
use super::params::{sample_bridge_portfolio, BridgeParameters, ParameterStatistics};
use super::simulate::{simulate_substepped, ResponseHistory};
use super::OracleError;
use crate::gm::GroundMotion;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub bridge: BridgeParameters,
    pub gm: GroundMotion,
    pub response: ResponseHistory,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl Split {
    /// Sizes `round(n f_train)`, `round(n f_val)`, remainder, taken in the
    /// order of `order`.
    pub fn from_fractions(order: &[usize], fractions: [f64; 3]) -> Result<Self, OracleError> {
        if fractions.iter().any(|f| !(*f >= 0.0)) {
            return Err(OracleError::Config("split fractions must be non-negative".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OracleError::Config(format!("split fractions sum to {total}, not 1")));
        }
        let n = order.len();
        let n_train = (n as f64 * fractions[0]).round() as usize;
        let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        Ok(Split {
            train_ids: order[..n_train].to_vec(),
            val_ids: order[n_train..n_train + n_val].to_vec(),
            test_ids: order[n_train + n_val..].to_vec(),
        })
    }

    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut all: Vec<usize> =
            self.train_ids.iter().chain(&self.val_ids).chain(&self.test_ids).copied().collect();
        all.sort_unstable();
        all == (0..n).collect::<Vec<_>>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub seed: u64,
    pub stats: ParameterStatistics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub split_fractions: [f64; 3],
    /// Integration steps per record sample.
    pub substeps: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { split_fractions: [900.0 / 1950.0, 240.0 / 1950.0, 810.0 / 1950.0], substeps: 5 }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Samples `n` bridges, pairs them with a seeded shuffle of the suite,
/// simulates every pair and splits the result.
pub fn build_dataset(
    n: usize,
    gm_suite: &[GroundMotion],
    stats: &ParameterStatistics,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Dataset, OracleError> {
    if n > gm_suite.len() {
        return Err(OracleError::Config(format!(
            "{n} samples requested but the suite has only {} records",
            gm_suite.len()
        )));
    }
    let bridges = sample_bridge_portfolio(n, stats, seed)?;

    let mut gm_order: Vec<usize> = (0..gm_suite.len()).collect();
    gm_order.shuffle(&mut stream(seed, 1));

    let samples: Vec<Sample> = bridges
        .par_iter()
        .enumerate()
        .map(|(i, bridge)| {
            let gm = &gm_suite[gm_order[i]];
            let model = assemble_reduced_model(bridge);
            let response = simulate_substepped(&model, gm, opts.substeps).map_err(|e| OracleError::Pair {
                index: i,
                gm_id: gm.id.clone(),
                source: Box::new(e),
            })?;
            Ok(Sample { bridge: *bridge, gm: gm.clone(), response })
        })
        .collect::<Result<_, OracleError>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 2));
    let split = Split::from_fractions(&order, opts.split_fractions)?;
    Ok(Dataset { samples, split, seed, stats: stats.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_split_sizes() {
        let order: Vec<usize> = (0..1950).collect();
        let s = Split::from_fractions(&order, DatasetOptions::default().split_fractions).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (900, 240, 810));
        assert!(s.is_partition_of(1950));
    }

    #[test]
    fn small_split() {
        let order: Vec<usize> = (0..10).rev().collect();
        let s = Split::from_fractions(&order, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (6, 2, 2));
        assert!(s.is_partition_of(10));
        assert!(Split::from_fractions(&order, [0.6, 0.6, 0.2]).is_err());
    }
}
