//! Trace-level accuracy metrics of predicted response histories.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Magnitude below which a true value is treated as a zero crossing.
pub const EPS_Y: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Relative error of the final value; `None` when the true final value
    /// is below [`EPS_Y`].
    pub residual_error: Option<f64>,
    pub peak_error: f64,
    pub amplitude_loss: f64,
    /// Steps left out of `amplitude_loss` because |y_true| < [`EPS_Y`].
    pub amplitude_excluded: usize,
    pub energy_loss: f64,
    pub r_squared: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "residual_error,peak_error,amplitude_loss,amplitude_excluded,energy_loss,r_squared";

    pub fn csv_row(&self) -> String {
        let res = self.residual_error.map_or(String::new(), |v| format!("{v:.9e}"));
        format!(
            "{res},{:.9e},{:.9e},{},{:.9e},{:.9e}",
            self.peak_error, self.amplitude_loss, self.amplitude_excluded, self.energy_loss, self.r_squared
        )
    }
}

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<(), MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::Domain(format!("length mismatch: {} true vs {} predicted", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(MetricsError::Domain(format!("need at least 2 steps, got {}", y_true.len())));
    }
    Ok(())
}

fn peak(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `1 - SS_res / SS_tot`; a constant truth gives 1 for an exact prediction
/// and negative infinity otherwise.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricsError> {
    check_pair(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    })
}

pub fn trace_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport, MetricsError> {
    check_pair(y_true, y_pred)?;
    let last_t = y_true[y_true.len() - 1];
    let last_p = y_pred[y_pred.len() - 1];
    let residual_error = (last_t.abs() >= EPS_Y).then(|| (last_p - last_t).abs() / last_t.abs());

    let pt = peak(y_true);
    if pt == 0.0 {
        return Err(MetricsError::Domain("true history is identically zero".into()));
    }
    let peak_error = (pt - peak(y_pred)) / pt;

    let mut amp = 0.0;
    let mut used = 0usize;
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.abs() >= EPS_Y {
            amp += (t - p).abs() / t.abs();
            used += 1;
        }
    }
    let amplitude_loss = if used > 0 { amp / used as f64 } else { 0.0 };

    let st: f64 = y_true.iter().map(|v| v.abs()).sum();
    let sp: f64 = y_pred.iter().map(|v| v.abs()).sum();
    Ok(MetricsReport {
        residual_error,
        peak_error,
        amplitude_loss,
        amplitude_excluded: y_true.len() - used,
        energy_loss: (st - sp) / st,
        r_squared: r_squared(y_true, y_pred)?,
    })
}

/// Per-step residuals scaled by the true peak.
pub fn normalized_error_samples(y_true: &[f64], y_pred: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::Domain(format!("length mismatch: {} true vs {} predicted", y_true.len(), y_pred.len())));
    }
    let pt = peak(y_true);
    if !(pt > 0.0) {
        return Err(MetricsError::Domain("true history is identically zero".into()));
    }
    Ok(y_true.iter().zip(y_pred).map(|(t, p)| (t - p) / pt).collect())
}

/// Empirical quantiles at percentile probes in [0, 100], interpolating
/// linearly between the closest ranks.
pub fn empirical_cdf_percentiles(values: &[f64], probes: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Domain("no values".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(MetricsError::Domain(format!("non-numeric value {v}")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    probes
        .iter()
        .map(|&q| {
            if !(0.0..=100.0).contains(&q) {
                return Err(MetricsError::Domain(format!("percentile {q} outside [0, 100]")));
            }
            let h = (s.len() - 1) as f64 * q / 100.0;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(s.len() - 1);
            Ok(s[lo] + (h - lo as f64) * (s[hi] - s[lo]))
        })
        .collect()
}

/// One row per evaluated trace with an identifier and channel name.
pub fn reports_csv(rows: &[(String, String, MetricsReport)]) -> String {
    let mut s = format!("sample,channel,{}\n", MetricsReport::CSV_HEADER);
    for (id, ch, r) in rows {
        writeln!(s, "{id},{ch},{}", r.csv_row()).unwrap();
    }
    s
}

/// 16th/50th/84th percentiles of every metric across traces.
pub fn summary_csv(reports: &[MetricsReport]) -> Result<String, MetricsError> {
    let cols: [(&str, Vec<f64>); 5] = [
        ("residual_error", reports.iter().filter_map(|r| r.residual_error).collect()),
        ("peak_error", reports.iter().map(|r| r.peak_error.abs()).collect()),
        ("amplitude_loss", reports.iter().map(|r| r.amplitude_loss).collect()),
        ("energy_loss", reports.iter().map(|r| r.energy_loss.abs()).collect()),
        ("r_squared", reports.iter().map(|r| r.r_squared).collect()),
    ];
    let mut s = String::from("metric,p16,p50,p84,count\n");
    for (name, v) in cols {
        if v.is_empty() {
            writeln!(s, "{name},,,,0").unwrap();
            continue;
        }
        let q = empirical_cdf_percentiles(&v, &[16.0, 50.0, 84.0])?;
        writeln!(s, "{name},{:.9e},{:.9e},{:.9e},{}", q[0], q[1], q[2], v.len()).unwrap();
    }
    Ok(s)
}
