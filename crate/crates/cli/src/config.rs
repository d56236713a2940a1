//! Pipeline configuration: one TOML file plus `key.path=value` overrides.

use crate::CliError;
use serde::{Deserialize, Serialize};
use sprnet_core::explain::SummaryStatistic;
use sprnet_core::oracle::{ResponseChannel, N_PARAMS, PARAM_NAMES};
use sprnet_core::risk::{DamageStateModel, EdpKind, HazardCurveParams};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Root of every artifact path; relative paths resolve against the
    /// config file's directory.
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub explain: ExplainSection,
    #[serde(default)]
    pub transfer: TransferSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub fragility: FragilitySection,
    #[serde(default)]
    pub loss: LossSection,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_samples: usize,
    pub n_steps: usize,
    /// Network time step, s.
    pub dt: f64,
    pub split: [f64; 3],
    pub substeps: usize,
    /// Directory of text ground-motion records, relative to the config file;
    /// synthetic records when unset.
    pub gm_dir: Option<PathBuf>,
    pub synth_dt: f64,
    pub pga_range: [f64; 2],
    pub corner_frequency_range: [f64; 2],
    pub bandwidth: f64,
    /// Rise, plateau (s) and decay rate (1/s) of the envelope.
    pub envelope: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_samples: 200,
            n_steps: 300,
            dt: 0.05,
            split: [0.6, 0.2, 0.2],
            substeps: 5,
            gm_dir: None,
            synth_dt: 0.01,
            pga_range: [0.05, 1.2],
            corner_frequency_range: [1.5, 4.0],
            bandwidth: 0.4,
            envelope: [2.0, 5.0, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub n_layers: usize,
    pub conv_filters: usize,
    pub dilation_multiplier: usize,
    pub kernel_size: usize,
    pub fc_hidden: usize,
    pub lstm_hidden: usize,
    pub channels: Vec<ResponseChannel>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            n_layers: 12,
            conv_filters: 16,
            dilation_multiplier: 2,
            kernel_size: 2,
            fc_hidden: 4,
            lstm_hidden: 16,
            channels: ResponseChannel::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { batch_size: 20, epochs: 200, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub enabled: bool,
    pub n_layers: usize,
    pub units: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { enabled: true, n_layers: 2, units: 32, batch_size: 20, epochs: 100, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub statistic: SummaryStatistic,
    /// Background rows drawn from the training split.
    pub n_background: usize,
    /// Test-split instances explained.
    pub n_instances: usize,
    /// Leading GM steps used while explaining; 0 keeps the whole record.
    pub max_steps: usize,
    /// Number of accessible features kept.
    pub k: usize,
    /// Names of accessible parameters; the geometric inventory set when unset.
    pub accessible: Option<Vec<String>>,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            statistic: SummaryStatistic::PeakDrift,
            n_background: 2,
            n_instances: 2,
            max_steps: 150,
            k: 3,
            accessible: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    /// Parameter indices; taken from the explain stage when unset.
    pub selected: Option<Vec<usize>>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub loss_blend: f64,
}

impl Default for TransferSection {
    fn default() -> Self {
        TransferSection { selected: None, batch_size: 20, epochs: 200, lr: 1e-3, loss_blend: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Bins of the normalized-error histogram on [-1, 1].
    pub histogram_bins: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { histogram_bins: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragilitySection {
    pub edps: Vec<EdpKind>,
    /// Capacity tables; the built-in presets for each EDP when unset.
    pub damage_states: Option<Vec<DamageStateModel>>,
    pub im_grid: GridSpec,
}

impl Default for FragilitySection {
    fn default() -> Self {
        FragilitySection { edps: EdpKind::ALL.to_vec(), damage_states: None, im_grid: GridSpec::default() }
    }
}

impl FragilitySection {
    pub fn states_for(&self, edp: EdpKind) -> DamageStateModel {
        self.damage_states
            .as_ref()
            .and_then(|v| v.iter().find(|d| d.edp == edp).cloned())
            .unwrap_or_else(|| DamageStateModel::preset(edp))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { min: 0.01, max: 3.0, n: 200 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub hazard: HazardCurveParams,
    /// `(pga, annual rate)` pairs; when given, the hazard curve is fitted to
    /// them instead of using `hazard`.
    pub hazard_points: Option<Vec<[f64; 2]>>,
    pub im_grid: GridSpec,
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<(), CliError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(bad(field, "must be at least 1"))
    }
}

fn grid(field: &str, g: &GridSpec) -> Result<(), CliError> {
    positive(&format!("{field}.min"), g.min)?;
    if !(g.max > g.min) {
        return Err(bad(&format!("{field}.max"), "must exceed min"));
    }
    if g.n < 2 {
        return Err(bad(&format!("{field}.n"), "must be at least 2"));
    }
    Ok(())
}

/// Index of a parameter name in the bridge vector.
pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|p| *p == name)
}

impl PipelineConfig {
    /// Desk-scale defaults with the given seed.
    pub fn desk(seed: u64) -> Self {
        PipelineConfig {
            seed,
            workdir: default_workdir(),
            data: DataConfig::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            baseline: BaselineSection::default(),
            explain: ExplainSection::default(),
            transfer: TransferSection::default(),
            evaluate: EvaluateSection::default(),
            fragility: FragilitySection::default(),
            loss: LossSection::default(),
        }
    }

    /// Dataset sizes and training schedule of the original study.
    pub fn paper(seed: u64) -> Self {
        let mut c = Self::desk(seed);
        c.data.n_samples = 1950;
        c.data.n_steps = 1200;
        c.data.split = [900.0 / 1950.0, 240.0 / 1950.0, 810.0 / 1950.0];
        c.train = TrainSection { batch_size: 180, epochs: 1000, lr: 1e-4 };
        c.baseline = BaselineSection { enabled: true, n_layers: 12, units: 32, batch_size: 180, epochs: 1000, lr: 1e-3 };
        c.explain.n_background = 64;
        c.explain.n_instances = 16;
        c.explain.max_steps = 0;
        c.transfer = TransferSection { selected: None, batch_size: 180, epochs: 1000, lr: 1e-4, loss_blend: 1.0 };
        c
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: PipelineConfig =
            toml::Value::Table(value).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative `workdir` and `data.gm_dir` are anchored
    /// at the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if cfg.workdir.is_relative() {
            cfg.workdir = base.join(&cfg.workdir);
        }
        if let Some(dir) = cfg.data.gm_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        at_least_one("data.n_samples", d.n_samples)?;
        at_least_one("data.n_steps", d.n_steps)?;
        at_least_one("data.substeps", d.substeps)?;
        positive("data.dt", d.dt)?;
        positive("data.synth_dt", d.synth_dt)?;
        if d.split.iter().any(|f| !(*f >= 0.0)) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(bad("data.split", "fractions must be non-negative and sum to 1"));
        }
        positive("data.pga_range[0]", d.pga_range[0])?;
        if d.pga_range[1] < d.pga_range[0] {
            return Err(bad("data.pga_range", "upper bound below lower bound"));
        }
        positive("data.corner_frequency_range[0]", d.corner_frequency_range[0])?;
        if d.corner_frequency_range[1] < d.corner_frequency_range[0] {
            return Err(bad("data.corner_frequency_range", "upper bound below lower bound"));
        }
        positive("data.bandwidth", d.bandwidth)?;
        if d.envelope.iter().any(|v| !(*v >= 0.0)) {
            return Err(bad("data.envelope", "entries must be non-negative"));
        }

        let n = &self.network;
        at_least_one("network.n_layers", n.n_layers)?;
        at_least_one("network.conv_filters", n.conv_filters)?;
        at_least_one("network.dilation_multiplier", n.dilation_multiplier)?;
        at_least_one("network.kernel_size", n.kernel_size)?;
        at_least_one("network.fc_hidden", n.fc_hidden)?;
        at_least_one("network.lstm_hidden", n.lstm_hidden)?;
        if n.channels.is_empty() {
            return Err(bad("network.channels", "at least one channel is required"));
        }

        at_least_one("train.batch_size", self.train.batch_size)?;
        positive("train.lr", self.train.lr)?;
        let b = &self.baseline;
        at_least_one("baseline.n_layers", b.n_layers)?;
        at_least_one("baseline.units", b.units)?;
        at_least_one("baseline.batch_size", b.batch_size)?;
        positive("baseline.lr", b.lr)?;

        let e = &self.explain;
        at_least_one("explain.n_background", e.n_background)?;
        at_least_one("explain.n_instances", e.n_instances)?;
        at_least_one("explain.k", e.k)?;
        if let Some(names) = &e.accessible {
            if names.is_empty() {
                return Err(bad("explain.accessible", "at least one feature must be accessible"));
            }
            for name in names {
                if param_index(name).is_none() {
                    return Err(bad("explain.accessible", format!("unknown parameter {name}")));
                }
            }
        }

        let t = &self.transfer;
        if let Some(sel) = &t.selected {
            if sel.is_empty() || sel.iter().any(|i| *i >= N_PARAMS) {
                return Err(bad("transfer.selected", format!("indices must be non-empty and below {N_PARAMS}")));
            }
        }
        at_least_one("transfer.batch_size", t.batch_size)?;
        positive("transfer.lr", t.lr)?;
        if !(0.0..=10.0).contains(&t.loss_blend) {
            return Err(bad("transfer.loss_blend", "must lie in [0, 10]"));
        }

        if self.evaluate.histogram_bins < 2 {
            return Err(bad("evaluate.histogram_bins", "must be at least 2"));
        }
        if self.fragility.edps.is_empty() {
            return Err(bad("fragility.edps", "at least one EDP is required"));
        }
        if let Some(states) = &self.fragility.damage_states {
            for (i, s) in states.iter().enumerate() {
                s.validate().map_err(|e| bad(&format!("fragility.damage_states[{i}]"), e))?;
            }
        }
        grid("fragility.im_grid", &self.fragility.im_grid)?;
        grid("loss.im_grid", &self.loss.im_grid)?;
        self.loss.hazard.validate().map_err(|e| bad("loss.hazard", e))?;
        if let Some(p) = &self.loss.hazard_points {
            if p.len() < 4 {
                return Err(bad("loss.hazard_points", "at least 4 points are required"));
            }
        }
        Ok(())
    }
}

/// Applies `a.b.c=value`, parsing the value as TOML and falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_desk_defaults() {
        let c = PipelineConfig::from_toml("seed = 7", &[]).unwrap();
        assert_eq!(c, PipelineConfig::desk(7));
    }

    #[test]
    fn seed_is_mandatory() {
        let err = PipelineConfig::from_toml("[data]\nn_samples = 3", &[]).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn overrides_and_field_paths() {
        let c = PipelineConfig::from_toml("seed = 1", &["train.epochs=5".into(), "explain.statistic=peak_bearing_disp".into()])
            .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.explain.statistic, SummaryStatistic::PeakBearingDisp);
        let err = PipelineConfig::from_toml("seed = 1", &["train.lr=-1".into()]).unwrap_err().to_string();
        assert!(err.contains("train.lr"), "{err}");
        let err = PipelineConfig::from_toml("seed = 1\n[train]\nepoch = 3", &[]).unwrap_err().to_string();
        assert!(err.contains("epoch"), "{err}");
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for c in [PipelineConfig::desk(3), PipelineConfig::paper(3)] {
            assert_eq!(PipelineConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
        }
    }

    #[test]
    fn unknown_accessible_name() {
        let err = PipelineConfig::from_toml("seed = 1\n[explain]\naccessible = [\"L\", \"nope\"]", &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("explain.accessible"), "{err}");
    }
}
