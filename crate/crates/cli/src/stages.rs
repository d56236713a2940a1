//! Pipeline stages. Each stage reads its inputs from the work directory,
//! writes its artifacts atomically and records a run manifest.

use crate::artifacts::{write_manifest, Layout, StageLock};
use crate::config::{param_index, GridSpec, PipelineConfig};
use crate::CliError;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sprnet_core::explain::{
    select_features, shapley_attributions, FeatureAccessibility, ShapleyReport, SprFeatureModel, SummaryStatistic,
};
use sprnet_core::gm::{parse_gm_record, peak_ground_acceleration, synthesize_gm, trim_resample, GroundMotion, StochasticGmConfig};
use sprnet_core::io::{load_model, read_dataset, save_model, write_atomic, write_dataset};
use sprnet_core::metrics::{empirical_cdf_percentiles, normalized_error_samples, reports_csv, summary_csv, trace_metrics};
use sprnet_core::oracle::{
    assemble_reduced_model, build_dataset, BridgeParameters, Dataset, DatasetOptions, ParameterStatistics,
    ResponseChannel, ResponseHistory, Sample, PARAM_NAMES,
};
use sprnet_core::risk::{
    cloud_regression, fit_hazard_curve, hazard_rate, log_grid, loss_table, CloudFit, EdpKind, FragilityModel,
    HazardCurveParams,
};
use sprnet_core::sprnet::{
    build_network, predict, train_model, transfer_probabilistic, Mode, Model, NetworkConfig, Prediction,
    ProbabilisticPrediction, TrainConfig, TrainHistory,
};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Train,
    Explain,
    Transfer,
    Evaluate,
    Fragility,
    Loss,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::GenData, Stage::Train, Stage::Explain, Stage::Transfer, Stage::Evaluate, Stage::Fragility, Stage::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Explain => "explain",
            Stage::Transfer => "transfer",
            Stage::Evaluate => "evaluate",
            Stage::Fragility => "fragility",
            Stage::Loss => "loss",
        }
    }
}

/// Artifacts written by one stage, relative to the work directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: Stage,
    pub outputs: Vec<String>,
}

struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    let layout = Layout::new(&cfg.workdir);
    let _lock = StageLock::acquire(&layout.root, stage.name())?;
    layout.ensure_dirs()?;
    let io = match stage {
        Stage::GenData => gen_data(cfg, &layout)?,
        Stage::Train => train(cfg, &layout)?,
        Stage::Explain => explain(cfg, &layout)?,
        Stage::Transfer => transfer(cfg, &layout)?,
        Stage::Evaluate => evaluate(cfg, &layout)?,
        Stage::Fragility => fragility(cfg, &layout)?,
        Stage::Loss => loss(cfg, &layout)?,
    };
    write_manifest(&layout, stage.name(), &cfg.to_toml(), &io.inputs, &io.outputs)?;
    Ok(StageReport { stage, outputs: io.outputs.iter().map(|p| layout.rel(p)).collect() })
}

fn csv_f(v: f64) -> String {
    format!("{v:.9e}")
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn features_of(model: &Model, bridge: &BridgeParameters) -> Vec<f64> {
    let all = bridge.to_array();
    model.config.feature_indices.iter().map(|&i| all[i]).collect()
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,best\n");
    for (i, t) in h.train_loss.iter().enumerate() {
        let v = h.val_loss.get(i).map_or(String::new(), |v| csv_f(*v));
        let best = u8::from(h.best_epoch == Some(i + 1));
        writeln!(s, "{},{},{v},{best}", i + 1, csv_f(*t)).unwrap();
    }
    s
}

// ---------------------------------------------------------------- gen-data

/// Ground-motion suite: text records from `data.gm_dir` in file-name order,
/// or seeded synthetic records.
pub fn ground_motion_suite(cfg: &PipelineConfig) -> Result<Vec<GroundMotion>, CliError> {
    let d = &cfg.data;
    let duration = d.n_steps as f64 * d.dt;
    let fit = |gm: GroundMotion| -> Result<GroundMotion, CliError> {
        let mut g = trim_resample(&gm, duration, d.dt)?;
        g.accel.truncate(d.n_steps);
        g.accel.resize(d.n_steps, 0.0);
        Ok(g)
    };
    if let Some(dir) = &d.gm_dir {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        return files
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                fit(parse_gm_record(&id, &text)?)
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(10);
    let (lo, hi) = (d.pga_range[0].ln(), d.pga_range[1].ln());
    let (flo, fhi) = (d.corner_frequency_range[0], d.corner_frequency_range[1]);
    (0..d.n_samples)
        .map(|i| {
            let u: f64 = rand::Rng::random(&mut rng);
            let w: f64 = rand::Rng::random(&mut rng);
            let gcfg = StochasticGmConfig {
                corner_frequency: flo + (fhi - flo) * w,
                damping_like_bandwidth: d.bandwidth,
                envelope_rise: d.envelope[0],
                envelope_plateau: d.envelope[1],
                envelope_decay_rate: d.envelope[2],
                target_pga: (lo + (hi - lo) * u).exp(),
                duration,
                dt: d.synth_dt,
                seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            };
            let mut gm = fit(synthesize_gm(&gcfg)?)?;
            gm.id = format!("syn-{i:05}");
            Ok(gm)
        })
        .collect()
}

fn gen_data(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let suite = ground_motion_suite(cfg)?;
    let opts = DatasetOptions { split_fractions: cfg.data.split, substeps: cfg.data.substeps };
    let ds = build_dataset(cfg.data.n_samples, &suite, &ParameterStatistics::bridge_class(), cfg.seed, &opts)?;
    let dir = layout.data_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_dataset(&ds, &dir)?;
    Ok(Io { inputs: vec![], outputs: vec![dir] })
}

// ---------------------------------------------------------------- train

fn load_data(stage: &str, layout: &Layout) -> Result<Dataset, CliError> {
    let dir = layout.data_dir();
    layout.require(stage, &dir.join(sprnet_core::io::MANIFEST_FILE), "gen-data")?;
    Ok(read_dataset(&dir)?)
}

fn load_named(stage: &str, layout: &Layout, name: &str, producer: &str) -> Result<Model, CliError> {
    let p = layout.model(name);
    layout.require(stage, &p, producer)?;
    Ok(load_model(&p)?)
}

pub fn spr_config(cfg: &PipelineConfig) -> NetworkConfig {
    let n = &cfg.network;
    NetworkConfig {
        n_layers: n.n_layers,
        conv_filters: n.conv_filters,
        dilation_multiplier: n.dilation_multiplier,
        kernel_size: n.kernel_size,
        fc_hidden: n.fc_hidden,
        lstm_hidden: n.lstm_hidden,
        channels: n.channels.clone(),
        mode: Mode::Deterministic,
        seed: cfg.seed,
        ..Default::default()
    }
}

fn train(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let ds = load_data("train", layout)?;
    let tc = TrainConfig {
        batch_size: cfg.train.batch_size,
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        loss_blend: 1.0,
        seed: cfg.seed,
    };
    let (det, hist) = train_model(build_network(&spr_config(cfg))?, &ds, &tc)?;
    let mut outputs = vec![layout.model("det"), layout.table("train_history")];
    save_model(&det, &outputs[0])?;
    write_text(&outputs[1], &history_csv(&hist))?;

    let b = &cfg.baseline;
    if b.enabled {
        let bcfg = NetworkConfig {
            n_layers: b.n_layers,
            baseline_units: b.units,
            channels: cfg.network.channels.clone(),
            seed: cfg.seed.wrapping_add(1),
            ..NetworkConfig::baseline()
        };
        let btc = TrainConfig { batch_size: b.batch_size, epochs: b.epochs, lr: b.lr, loss_blend: 1.0, seed: cfg.seed };
        let (base, bh) = train_model(build_network(&bcfg)?, &ds, &btc)?;
        save_model(&base, &layout.model("baseline"))?;
        write_text(&layout.table("baseline_history"), &history_csv(&bh))?;
        outputs.push(layout.model("baseline"));
        outputs.push(layout.table("baseline_history"));
    } else {
        for p in [layout.model("baseline"), layout.table("baseline_history")] {
            if p.exists() {
                fs::remove_file(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            }
        }
    }
    Ok(Io { inputs: vec![layout.data_dir()], outputs })
}

// ---------------------------------------------------------------- explain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub statistic: SummaryStatistic,
    pub selected: Vec<usize>,
    pub names: Vec<String>,
}

fn test_ids(ds: &Dataset) -> Result<&[usize], CliError> {
    if !ds.split.test_ids.is_empty() {
        Ok(&ds.split.test_ids)
    } else if !ds.split.val_ids.is_empty() {
        Ok(&ds.split.val_ids)
    } else {
        Err(CliError::Config("data.split: the test and validation splits are both empty".into()))
    }
}

fn explain(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let ds = load_data("explain", layout)?;
    let det = load_named("explain", layout, "det", "train")?;
    let e = &cfg.explain;
    if ds.split.train_ids.is_empty() {
        return Err(CliError::Config("data.split: the training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(20);
    let bg_ids: Vec<usize> = ds.split.train_ids.choose_multiple(&mut rng, e.n_background).copied().collect();
    let background: Vec<Vec<f64>> = bg_ids.iter().map(|&i| features_of(&det, &ds.samples[i].bridge)).collect();
    let instances: Vec<usize> = test_ids(&ds)?.iter().take(e.n_instances).copied().collect();

    let mut reports: Vec<ShapleyReport> = Vec::with_capacity(instances.len());
    for &id in &instances {
        let s = &ds.samples[id];
        let mut gm = s.gm.clone();
        if e.max_steps > 0 {
            gm.accel.truncate(e.max_steps);
        }
        let fm = SprFeatureModel { model: &det, gm: &gm, statistic: e.statistic };
        reports.push(shapley_attributions(&fm, &features_of(&det, &s.bridge), &background)?);
    }

    let names: Vec<String> = det.config.feature_indices.iter().map(|&i| PARAM_NAMES[i].to_string()).collect();
    let accessible = match &e.accessible {
        Some(list) => {
            let idx: Vec<usize> = list.iter().filter_map(|n| param_index(n)).collect();
            det.config.feature_indices.iter().map(|i| idx.contains(i)).collect()
        }
        None => {
            let inv = FeatureAccessibility::bridge_inventory();
            det.config.feature_indices.iter().map(|&i| inv.accessible[i]).collect()
        }
    };
    let selection = select_features(&reports, &FeatureAccessibility { accessible }, e.k, Some(&names))?;
    let selected: Vec<usize> = selection.selected.iter().map(|&j| det.config.feature_indices[j]).collect();

    let mut values = String::from("instance,sample,base_value,prediction");
    for n in &names {
        write!(values, ",{n}").unwrap();
    }
    values.push('\n');
    for (k, (id, r)) in instances.iter().zip(&reports).enumerate() {
        write!(values, "{k},{id},{},{}", csv_f(r.base_value), csv_f(r.prediction)).unwrap();
        for a in &r.attributions {
            write!(values, ",{}", csv_f(*a)).unwrap();
        }
        values.push('\n');
    }
    let sel = SelectionFile {
        statistic: e.statistic,
        names: selected.iter().map(|&i| PARAM_NAMES[i].to_string()).collect(),
        selected,
    };
    let outputs = vec![layout.table("shapley_values"), layout.table("shapley_ranking"), layout.selection()];
    write_text(&outputs[0], &values)?;
    write_text(&outputs[1], &selection.to_csv())?;
    write_text(&outputs[2], &serde_json::to_string_pretty(&sel).expect("serializable selection"))?;
    Ok(Io { inputs: vec![layout.data_dir(), layout.model("det")], outputs })
}

// ---------------------------------------------------------------- transfer

fn transfer(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let ds = load_data("transfer", layout)?;
    let det = load_named("transfer", layout, "det", "train")?;
    let mut inputs = vec![layout.data_dir(), layout.model("det")];
    let selected = match &cfg.transfer.selected {
        Some(s) => s.clone(),
        None => {
            let p = layout.selection();
            layout.require("transfer", &p, "explain")?;
            let text = fs::read_to_string(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            inputs.push(p);
            serde_json::from_str::<SelectionFile>(&text)
                .map_err(|e| CliError::Config(format!("selection.json: {e}")))?
                .selected
        }
    };
    let t = &cfg.transfer;
    let tc = TrainConfig { batch_size: t.batch_size, epochs: t.epochs, lr: t.lr, loss_blend: t.loss_blend, seed: cfg.seed };
    let (prob, hist) = transfer_probabilistic(&det, &selected, &ds, &tc)?;
    let outputs = vec![layout.model("prob"), layout.table("transfer_history")];
    save_model(&prob, &outputs[0])?;
    write_text(&outputs[1], &history_csv(&hist))?;
    Ok(Io { inputs, outputs })
}

// ---------------------------------------------------------------- evaluate

/// Histories predicted for one sample by a model, rebuilt with the sample's
/// own column height so energies are comparable with the truth.
#[derive(Debug, Clone)]
pub struct PredictedHistories {
    pub median: ResponseHistory,
    /// `(z = -1, z = +1)` quantile histories of a probabilistic model.
    pub band: Option<(ResponseHistory, ResponseHistory)>,
    pub prediction: Prediction,
}

fn rebuild(dt: f64, channels: &[ResponseChannel], values: &[Vec<f64>], t_len: usize, h_c: f64) -> ResponseHistory {
    let mut ch: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; t_len]);
    for (c, v) in channels.iter().zip(values) {
        let slot = ResponseChannel::ALL.iter().position(|a| a == c).expect("known channel");
        ch[slot] = v.clone();
    }
    let [d, cf, bd, bf] = ch;
    ResponseHistory::from_channels(dt, d, cf, bd, bf, h_c)
}

pub fn predict_sample(model: &Model, sample: &Sample) -> Result<PredictedHistories, CliError> {
    let pred = predict(model, &sample.gm, &features_of(model, &sample.bridge))?;
    let h_c = sample.bridge.H_c;
    let t_len = sample.gm.len();
    let channels = &model.config.channels;
    let out = match &pred {
        Prediction::Deterministic(h) => {
            let values: Vec<Vec<f64>> = channels.iter().map(|c| h.channel(*c).to_vec()).collect();
            PredictedHistories { median: rebuild(h.dt, channels, &values, t_len, h_c), band: None, prediction: pred }
        }
        Prediction::Probabilistic(p) => PredictedHistories {
            median: rebuild(p.dt, channels, &p.median(), t_len, h_c),
            band: Some((
                rebuild(p.dt, channels, &p.quantile_band(-1.0), t_len, h_c),
                rebuild(p.dt, channels, &p.quantile_band(1.0), t_len, h_c),
            )),
            prediction: pred,
        },
    };
    Ok(out)
}

fn available_models(layout: &Layout) -> Vec<&'static str> {
    ["det", "baseline", "prob"].into_iter().filter(|m| layout.model(m).exists()).collect()
}

const STATISTICS: [SummaryStatistic; 6] = [
    SummaryStatistic::PeakDrift,
    SummaryStatistic::PeakColumnForce,
    SummaryStatistic::ColumnEnergy,
    SummaryStatistic::PeakBearingDisp,
    SummaryStatistic::PeakBearingForce,
    SummaryStatistic::BearingEnergy,
];

fn statistic_name(s: SummaryStatistic) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn coverage_rows(p: &ProbabilisticPrediction, truth: &ResponseHistory, acc: &mut [(usize, usize, Vec<f64>)]) {
    let (_, sigma) = p.mu_sigma();
    let lo = p.quantile_band(-1.0);
    let hi = p.quantile_band(1.0);
    for (k, c) in p.channels.iter().enumerate() {
        let y = truth.channel(*c);
        for t in 0..y.len() {
            if y[t].abs() > 1e-5 {
                let (a, b) = if lo[k][t] <= hi[k][t] { (lo[k][t], hi[k][t]) } else { (hi[k][t], lo[k][t]) };
                acc[k].0 += usize::from(y[t] >= a && y[t] <= b);
                acc[k].1 += 1;
                acc[k].2.push(sigma[k][t]);
            }
        }
    }
}

fn evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let ds = load_data("evaluate", layout)?;
    layout.require("evaluate", &layout.model("det"), "train")?;
    let ids = test_ids(&ds)?.to_vec();
    let mut inputs = vec![layout.data_dir()];
    let mut outputs = Vec::new();
    let bins = cfg.evaluate.histogram_bins;

    let mut pct = String::from("statistic,source,p16,p50,p84\n");
    let truth_stats: Vec<Vec<f64>> =
        STATISTICS.iter().map(|s| ids.iter().map(|&i| s.reduce(&ds.samples[i].response)).collect()).collect();
    let mut stat_rows: Vec<(String, Vec<Vec<f64>>)> = vec![("truth".into(), truth_stats)];

    for name in available_models(layout) {
        let model = load_model(&layout.model(name))?;
        inputs.push(layout.model(name));
        let mut rows = Vec::new();
        let mut reports = Vec::new();
        let channels = model.config.channels.clone();
        let mut hist = vec![vec![0usize; bins]; channels.len()];
        let mut cover: Vec<(usize, usize, Vec<f64>)> = vec![(0, 0, Vec::new()); channels.len()];
        let mut preds = Vec::with_capacity(ids.len());
        for &id in &ids {
            let s = &ds.samples[id];
            let ph = predict_sample(&model, s)?;
            for (k, c) in channels.iter().enumerate() {
                let (y, p) = (s.response.channel(*c), ph.median.channel(*c));
                if let Ok(r) = trace_metrics(y, p) {
                    rows.push((id.to_string(), c.name().to_string(), r));
                    reports.push(r);
                }
                if let Ok(errs) = normalized_error_samples(y, p) {
                    for e in errs {
                        let b = (((e + 1.0) / 2.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
                        hist[k][b] += 1;
                    }
                }
            }
            if let Prediction::Probabilistic(p) = &ph.prediction {
                coverage_rows(p, &s.response, &mut cover);
            }
            preds.push(ph.median);
        }
        let metrics = layout.table(&format!("metrics_{name}"));
        let summary = layout.table(&format!("metrics_{name}_summary"));
        let nerr = layout.table(&format!("normalized_error_{name}"));
        write_text(&metrics, &reports_csv(&rows))?;
        write_text(&summary, &summary_csv(&reports)?)?;
        let mut h = String::from("bin_center");
        for c in &channels {
            write!(h, ",{}", c.name()).unwrap();
        }
        h.push('\n');
        let width = 2.0 / bins as f64;
        let totals: Vec<usize> = hist.iter().map(|v| v.iter().sum::<usize>().max(1)).collect();
        for b in 0..bins {
            write!(h, "{}", csv_f(-1.0 + (b as f64 + 0.5) * width)).unwrap();
            for (k, v) in hist.iter().enumerate() {
                write!(h, ",{}", csv_f(v[b] as f64 / (totals[k] as f64 * width))).unwrap();
            }
            h.push('\n');
        }
        write_text(&nerr, &h)?;
        outputs.extend([metrics, summary, nerr]);

        if name == "prob" {
            let mut c = String::from("channel,steps,coverage_1sigma,median_sigma\n");
            for (k, ch) in channels.iter().enumerate() {
                let (hit, n, sig) = &cover[k];
                let med = if sig.is_empty() { f64::NAN } else { empirical_cdf_percentiles(sig, &[50.0])?[0] };
                let frac = if *n == 0 { f64::NAN } else { *hit as f64 / *n as f64 };
                writeln!(c, "{},{n},{},{}", ch.name(), csv_f(frac), csv_f(med)).unwrap();
            }
            let path = layout.table("coverage_prob");
            write_text(&path, &c)?;
            outputs.push(path);
        }
        let stats = STATISTICS.iter().map(|s| preds.iter().map(|h| s.reduce(h)).collect()).collect();
        stat_rows.push((name.to_string(), stats));
    }

    for (k, s) in STATISTICS.iter().enumerate() {
        for (src, stats) in &stat_rows {
            let q = empirical_cdf_percentiles(&stats[k], &[16.0, 50.0, 84.0])?;
            writeln!(pct, "{},{src},{},{},{}", statistic_name(*s), csv_f(q[0]), csv_f(q[1]), csv_f(q[2])).unwrap();
        }
    }
    let path = layout.table("response_percentiles");
    write_text(&path, &pct)?;
    outputs.push(path);
    Ok(Io { inputs, outputs })
}

// ---------------------------------------------------------------- fragility

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub source: String,
    pub edp: EdpKind,
    pub fit: CloudFit,
    pub n: usize,
}

fn grid_of(g: &GridSpec) -> Result<Vec<f64>, CliError> {
    Ok(log_grid(g.min, g.max, g.n)?)
}

fn fragility(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let ds = load_data("fragility", layout)?;
    layout.require("fragility", &layout.model("det"), "train")?;
    let ids = test_ids(&ds)?.to_vec();
    let mut inputs = vec![layout.data_dir()];

    // source name -> per-sample histories, aligned with `ids`
    let mut sources: Vec<(String, Vec<ResponseHistory>)> =
        vec![("truth".into(), ids.iter().map(|&i| ds.samples[i].response.clone()).collect())];
    for name in available_models(layout) {
        let model = load_model(&layout.model(name))?;
        inputs.push(layout.model(name));
        let preds: Vec<PredictedHistories> =
            ids.iter().map(|&i| predict_sample(&model, &ds.samples[i])).collect::<Result<_, _>>()?;
        if name == "prob" {
            let (lo, hi): (Vec<_>, Vec<_>) = preds.iter().map(|p| p.band.clone().expect("probabilistic band")).unzip();
            sources.push(("prob_p16".into(), lo));
            sources.push(("prob_median".into(), preds.into_iter().map(|p| p.median).collect()));
            sources.push(("prob_p84".into(), hi));
        } else {
            sources.push((name.to_string(), preds.into_iter().map(|p| p.median).collect()));
        }
    }

    let grid = grid_of(&cfg.fragility.im_grid)?;
    let models: Vec<_> = ids.iter().map(|&i| assemble_reduced_model(&ds.samples[i].bridge)).collect();
    let ims: Vec<f64> =
        ids.iter().map(|&i| peak_ground_acceleration(&ds.samples[i].gm)).collect::<Result<_, _>>()?;
    let mut fits = Vec::new();
    let mut outputs = Vec::new();
    let mut medians = String::from("source,edp,state,median_im\n");
    for (src, histories) in &sources {
        for &edp in &cfg.fragility.edps {
            let mut pairs = Vec::with_capacity(ids.len());
            let mut cloud = String::from("sample,im,edp\n");
            for (k, h) in histories.iter().enumerate() {
                let v = edp.evaluate(h, &models[k])?;
                writeln!(cloud, "{},{},{}", ids[k], csv_f(ims[k]), csv_f(v)).unwrap();
                if v > 0.0 && ims[k] > 0.0 {
                    pairs.push((ims[k], v));
                }
            }
            let fit = cloud_regression(&pairs)?;
            let fm = FragilityModel::new(fit, &cfg.fragility.states_for(edp))?;
            let tag = format!("{src}_{}", edp.name());
            let cloud_path = layout.table(&format!("cloud_{tag}"));
            let curve_path = layout.table(&format!("fragility_{tag}"));
            write_text(&cloud_path, &cloud)?;
            write_text(&curve_path, &fm.curves_csv(&grid)?)?;
            outputs.extend([cloud_path, curve_path]);
            for (i, st) in fm.states.iter().enumerate() {
                let m = fm.median_im(i).map_or(String::new(), csv_f);
                writeln!(medians, "{src},{},{},{m}", edp.name(), st.name).unwrap();
            }
            fits.push(FitRecord { source: src.clone(), edp, fit, n: pairs.len() });
        }
    }
    let mpath = layout.table("fragility_medians");
    write_text(&mpath, &medians)?;
    write_text(&layout.fits(), &serde_json::to_string_pretty(&fits).expect("serializable fits"))?;
    outputs.push(mpath);
    outputs.push(layout.fits());
    Ok(Io { inputs, outputs })
}

// ---------------------------------------------------------------- loss

pub fn hazard_params(cfg: &PipelineConfig) -> Result<HazardCurveParams, CliError> {
    match &cfg.loss.hazard_points {
        Some(points) => {
            let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
            Ok(fit_hazard_curve(&pts)?)
        }
        None => Ok(cfg.loss.hazard),
    }
}

fn loss(cfg: &PipelineConfig, layout: &Layout) -> Result<Io, CliError> {
    let path = layout.fits();
    layout.require("loss", &path, "fragility")?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let fits: Vec<FitRecord> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let hazard = hazard_params(cfg)?;
    let grid = grid_of(&cfg.loss.im_grid)?;

    let mut outputs = Vec::new();
    let mut hz = String::from("im,annual_rate\n");
    for &im in &grid {
        writeln!(hz, "{},{}", csv_f(im), csv_f(hazard_rate(im, &hazard)?)).unwrap();
    }
    let hpath = layout.table("hazard_curve");
    write_text(&hpath, &hz)?;
    outputs.push(hpath);

    let mut summary = String::from("source,edp,slr\n");
    for f in &fits {
        if !cfg.fragility.edps.contains(&f.edp) {
            continue;
        }
        let fm = FragilityModel::new(f.fit, &cfg.fragility.states_for(f.edp))?;
        let table = loss_table(&fm, &hazard, &grid)?;
        let p = layout.table(&format!("loss_{}_{}", f.source, f.edp.name()));
        write_text(&p, &table.to_csv())?;
        outputs.push(p);
        writeln!(summary, "{},{},{}", f.source, f.edp.name(), csv_f(table.slr)).unwrap();
    }
    let spath = layout.table("loss_summary");
    write_text(&spath, &summary)?;
    outputs.push(spath);
    Ok(Io { inputs: vec![path], outputs })
}

// ---------------------------------------------------------------- predict

/// Where a prediction's inputs come from.
pub enum PredictInput {
    Sample(usize),
    Record { gm: PathBuf, features: Vec<f64> },
}

/// Writes one prediction as CSV: a time column and one column per channel,
/// with 16th/50th/84th percentile columns for probabilistic models.
pub fn predict_to_csv(cfg: &PipelineConfig, model_ref: &str, input: &PredictInput) -> Result<String, CliError> {
    let layout = Layout::new(&cfg.workdir);
    let path = if model_ref.ends_with(".sprw") { PathBuf::from(model_ref) } else { layout.model(model_ref) };
    layout.require("predict", &path, "train or transfer")?;
    let model = load_model(&path)?;
    let (gm, feats) = match input {
        PredictInput::Sample(id) => {
            let ds = load_data("predict", &layout)?;
            let s = ds
                .samples
                .get(*id)
                .ok_or_else(|| CliError::Config(format!("sample {id} outside the dataset of {}", ds.samples.len())))?;
            (s.gm.clone(), features_of(&model, &s.bridge))
        }
        PredictInput::Record { gm, features } => {
            let text = fs::read_to_string(gm).map_err(|e| CliError::Io(format!("{}: {e}", gm.display())))?;
            (parse_gm_record("input", &text)?, features.clone())
        }
    };
    let pred = predict(&model, &gm, &feats)?;
    let mut s = String::from("t");
    let channels = &model.config.channels;
    match &pred {
        Prediction::Deterministic(h) => {
            for c in channels {
                write!(s, ",{}", c.name()).unwrap();
            }
            s.push('\n');
            for t in 0..h.len() {
                write!(s, "{}", csv_f(t as f64 * h.dt)).unwrap();
                for c in channels {
                    write!(s, ",{}", csv_f(h.channel(*c)[t])).unwrap();
                }
                s.push('\n');
            }
        }
        Prediction::Probabilistic(p) => {
            for c in channels {
                write!(s, ",{0}_p16,{0}_median,{0}_p84", c.name()).unwrap();
            }
            s.push('\n');
            let (lo, med, hi) = (p.quantile_band(-1.0), p.median(), p.quantile_band(1.0));
            for t in 0..p.len() {
                write!(s, "{}", csv_f(t as f64 * p.dt)).unwrap();
                for k in 0..channels.len() {
                    write!(s, ",{},{},{}", csv_f(lo[k][t]), csv_f(med[k][t]), csv_f(hi[k][t])).unwrap();
                }
                s.push('\n');
            }
        }
    }
    Ok(s)
}
