//! Ground-truth generator: bridge sampling, a reduced-order nonlinear bridge
//! model and its time integration.

mod dataset;
mod model;
mod params;
mod simulate;

use thiserror::Error;

pub use dataset::{build_dataset, Dataset, DatasetOptions, Sample, Split};
pub use model::{
    assemble_reduced_model, rayleigh_coefficients, Backfill, BearingSlider, Bilinear, ColumnSpring, GapElement,
    PileSpring, PlasticState, RayleighDamping, ReducedBridgeModel, GRAVITY, HARDENING_RATIO,
};
pub use params::{
    lhs_quantiles, sample_bridge_portfolio, BridgeParameters, Marginal, ParamStat, ParameterStatistics, N_PARAMS,
    PARAM_NAMES,
};
pub use simulate::{
    cumulative_dissipated, hysteretic_energy, simulate_from, simulate_response, simulate_substepped,
    ResponseChannel, ResponseHistory, MAX_DT,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("simulation failed at step {step}: {msg}")]
    Simulation { step: usize, msg: String },
    #[error("sample {index} (record {gm_id}): {source}")]
    Pair {
        index: usize,
        gm_id: String,
        #[source]
        source: Box<OracleError>,
    },
}
