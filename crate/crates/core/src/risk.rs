//! Cloud-analysis fragility, damage indices, hazard curves and normalized
//! seismic loss ratios. The intensity measure is PGA in g throughout.

use crate::oracle::{ReducedBridgeModel, ResponseHistory};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt::Write as _;
use thiserror::Error;

/// Slack allowed when exceedance probabilities of consecutive states cross.
pub const MONOTONE_TOL: f64 = 1e-9;
pub const PSI_PA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate model: {0}")]
    Degenerate(String),
    #[error("hazard fit did not converge after {iterations} iterations (rms log residual {residual:.3e})")]
    Fit { iterations: usize, residual: f64 },
    #[error("inconsistent exceedance probabilities: {0}")]
    Consistency(String),
    #[error("configuration error: {0}")]
    Config(String),
}

fn std_normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(z)
}

/// Log-linear demand model `ln EDP = a + b ln IM` with dispersion `beta_edp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudFit {
    pub a: f64,
    pub b: f64,
    pub beta_edp: f64,
}

impl CloudFit {
    pub fn median_demand(&self, im: f64) -> f64 {
        (self.a + self.b * im.ln()).exp()
    }
}

/// Ordinary least squares of `ln edp` on `ln im`, dispersion with `M - 2`
/// degrees of freedom.
pub fn cloud_regression(pairs: &[(f64, f64)]) -> Result<CloudFit, RiskError> {
    if pairs.len() < 3 {
        return Err(RiskError::Domain(format!("cloud regression needs at least 3 pairs, got {}", pairs.len())));
    }
    if let Some((im, edp)) = pairs.iter().find(|(im, edp)| !(*im > 0.0 && *edp > 0.0 && im.is_finite() && edp.is_finite())) {
        return Err(RiskError::Domain(format!("non-positive pair (im {im}, edp {edp})")));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let xm = xs.iter().sum::<f64>() / m;
    let ym = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = ym - b * xm;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    Ok(CloudFit { a, b, beta_edp: (sse / (m - 2.0)).sqrt() })
}

/// `P[EDP >= C | im]` for a lognormal demand and capacity.
pub fn fragility_probability(a: f64, b: f64, beta_edp: f64, c: f64, beta_c: f64, im: f64) -> Result<f64, RiskError> {
    if !(im > 0.0) {
        return Err(RiskError::Domain(format!("im must be positive, got {im}")));
    }
    if !(c > 0.0) {
        return Err(RiskError::Domain(format!("capacity median must be positive, got {c}")));
    }
    let s = (beta_edp * beta_edp + beta_c * beta_c).sqrt();
    if !(s > 0.0) {
        return Err(RiskError::Degenerate("combined demand and capacity dispersion is zero".into()));
    }
    Ok(std_normal_cdf((a + b * im.ln() - c.ln()) / s))
}

/// Peak column displacement over the yield displacement.
pub fn drift_ductility(history: &ResponseHistory, delta_y: f64, h_c: f64) -> Result<f64, RiskError> {
    if !(delta_y > 0.0) {
        return Err(RiskError::Domain(format!("yield displacement must be positive, got {delta_y}")));
    }
    let peak = history.column_disp(h_c).iter().fold(0.0f64, |m, d| m.max(d.abs()));
    Ok(peak / delta_y)
}

/// `delta_max/delta_u + psi E_h/(F_y delta_u)`. Lengths in m, energy in kN*m,
/// force in kN.
pub fn park_ang_index(delta_max: f64, delta_u: f64, e_h: f64, f_y: f64, psi: f64) -> Result<f64, RiskError> {
    if !(delta_u > 0.0) || !(f_y > 0.0) {
        return Err(RiskError::Domain(format!("capacity must be positive (delta_u {delta_u}, F_y {f_y})")));
    }
    if !(e_h >= 0.0) {
        return Err(RiskError::Domain(format!("hysteretic energy must be non-negative, got {e_h}")));
    }
    Ok(delta_max / delta_u + psi * e_h / (f_y * delta_u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdpKind {
    DriftDuctility,
    /// Park-Ang index referenced to the yield displacement. The index at a
    /// state with ductility limit `mu` is this value divided by `mu`, so
    /// exceeding the state is the same event as this value exceeding `mu`.
    ParkAng,
    BearingDispMm,
}

impl EdpKind {
    pub const ALL: [EdpKind; 3] = [EdpKind::DriftDuctility, EdpKind::ParkAng, EdpKind::BearingDispMm];

    pub fn name(self) -> &'static str {
        match self {
            EdpKind::DriftDuctility => "drift_ductility",
            EdpKind::ParkAng => "park_ang",
            EdpKind::BearingDispMm => "bearing_disp_mm",
        }
    }

    /// Scalar demand of one response history of the given bridge.
    pub fn evaluate(self, history: &ResponseHistory, model: &ReducedBridgeModel) -> Result<f64, RiskError> {
        match self {
            EdpKind::DriftDuctility => drift_ductility(history, model.delta_y, model.column_height),
            EdpKind::ParkAng => {
                let peak = history.column_disp(model.column_height).iter().fold(0.0f64, |m, d| m.max(d.abs()));
                let e_h = history.column_energy.last().copied().unwrap_or(0.0) / 1e3;
                park_ang_index(peak, model.delta_y, e_h.max(0.0), model.column.f_y, PSI_PA)
            }
            EdpKind::BearingDispMm => Ok(history.bearing_disp.iter().fold(0.0f64, |m, d| m.max(d.abs()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityState {
    pub name: String,
    pub median: f64,
    pub beta_c: f64,
    pub damage_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageStateModel {
    pub edp: EdpKind,
    pub states: Vec<CapacityState>,
}

const STATE_NAMES: [&str; 4] = ["slight", "moderate", "extensive", "collapse"];

impl DamageStateModel {
    fn from_table(edp: EdpKind, names: &[&str], medians: &[f64], betas: &[f64], ratios: &[f64]) -> Self {
        let states = names
            .iter()
            .zip(medians)
            .zip(betas)
            .zip(ratios)
            .map(|(((n, m), b), d)| CapacityState { name: n.to_string(), median: *m, beta_c: *b, damage_ratio: *d })
            .collect();
        DamageStateModel { edp, states }
    }

    pub fn column_drift_ductility() -> Self {
        Self::from_table(
            EdpKind::DriftDuctility,
            &STATE_NAMES,
            &[1.0, 2.0, 3.0, 4.0],
            &[0.25, 0.25, 0.47, 0.47],
            &[0.03, 0.08, 0.25, 1.0],
        )
    }

    pub fn column_park_ang() -> Self {
        DamageStateModel { edp: EdpKind::ParkAng, ..Self::column_drift_ductility() }
    }

    pub fn bearing_displacement() -> Self {
        Self::from_table(EdpKind::BearingDispMm, &STATE_NAMES[..2], &[25.4, 101.6], &[0.25, 0.25], &[0.5, 1.0])
    }

    pub fn preset(edp: EdpKind) -> Self {
        match edp {
            EdpKind::DriftDuctility => Self::column_drift_ductility(),
            EdpKind::ParkAng => Self::column_park_ang(),
            EdpKind::BearingDispMm => Self::bearing_displacement(),
        }
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if self.states.is_empty() {
            return Err(RiskError::Config("damage state model has no states".into()));
        }
        for s in &self.states {
            if !(s.median > 0.0 && s.median.is_finite()) {
                return Err(RiskError::Config(format!("state {}: median must be positive", s.name)));
            }
            if !(s.beta_c >= 0.0 && s.beta_c.is_finite()) {
                return Err(RiskError::Config(format!("state {}: beta_c must be non-negative", s.name)));
            }
            if !(0.0..=1.0).contains(&s.damage_ratio) {
                return Err(RiskError::Config(format!("state {}: damage ratio must lie in [0, 1]", s.name)));
            }
        }
        for w in self.states.windows(2) {
            if w[1].median < w[0].median {
                return Err(RiskError::Config(format!("median of {} below {}", w[1].name, w[0].name)));
            }
            if w[1].damage_ratio < w[0].damage_ratio {
                return Err(RiskError::Config(format!("damage ratio of {} below {}", w[1].name, w[0].name)));
            }
        }
        Ok(())
    }
}

/// Demand model plus ordered capacity states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragilityModel {
    pub a: f64,
    pub b: f64,
    pub beta_edp: f64,
    pub states: Vec<CapacityState>,
}

impl FragilityModel {
    pub fn new(fit: CloudFit, states: &DamageStateModel) -> Result<Self, RiskError> {
        states.validate()?;
        let m = FragilityModel { a: fit.a, b: fit.b, beta_edp: fit.beta_edp, states: states.states.clone() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.beta_edp >= 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(RiskError::Config(format!(
                "invalid demand model a={}, b={}, beta_EDP={}",
                self.a, self.b, self.beta_edp
            )));
        }
        DamageStateModel { edp: EdpKind::DriftDuctility, states: self.states.clone() }.validate()
    }

    /// Raw lognormal exceedance probability of one state.
    pub fn state_probability(&self, state: usize, im: f64) -> Result<f64, RiskError> {
        let s = &self.states[state];
        fragility_probability(self.a, self.b, self.beta_edp, s.median, s.beta_c, im)
    }

    /// Exceedance probabilities of all states at `im`. Curves with unequal
    /// capacity dispersions cross in the far lower tail, so each state is
    /// capped by the one below it.
    pub fn exceedance(&self, im: f64) -> Result<Vec<f64>, RiskError> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut cap = 1.0f64;
        for i in 0..self.states.len() {
            let p = self.state_probability(i, im)?.min(cap);
            cap = p;
            out.push(p);
        }
        Ok(out)
    }

    /// PGA at which a state is exceeded with probability one half.
    pub fn median_im(&self, state: usize) -> Result<f64, RiskError> {
        if self.b == 0.0 {
            return Err(RiskError::Degenerate("zero demand slope has no median intensity".into()));
        }
        Ok(((self.states[state].median.ln() - self.a) / self.b).exp())
    }

    pub fn damage_ratios(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.damage_ratio).collect()
    }

    /// Table of exceedance curves on a grid: `im,<state>...`.
    pub fn curves_csv(&self, im_grid: &[f64]) -> Result<String, RiskError> {
        let mut s = String::from("im");
        for st in &self.states {
            write!(s, ",{}", st.name).unwrap();
        }
        s.push('\n');
        for &im in im_grid {
            write!(s, "{im:.6e}").unwrap();
            for p in self.exceedance(im)? {
                write!(s, ",{p:.9e}").unwrap();
            }
            s.push('\n');
        }
        Ok(s)
    }
}

/// Occupancy of each damage state from ordered exceedance probabilities.
pub fn in_state_probabilities(exceedance: &[f64]) -> Result<Vec<f64>, RiskError> {
    let mut p = exceedance.to_vec();
    for (i, v) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(v) {
            return Err(RiskError::Consistency(format!("exceedance {v} of state {i} outside [0, 1]")));
        }
    }
    for i in 1..p.len() {
        if p[i] > p[i - 1] {
            if p[i] - p[i - 1] > MONOTONE_TOL {
                return Err(RiskError::Consistency(format!(
                    "state {i} exceedance {} above state {} exceedance {}",
                    p[i],
                    i - 1,
                    p[i - 1]
                )));
            }
            p[i] = p[i - 1];
        }
    }
    Ok((0..p.len()).map(|i| if i + 1 < p.len() { p[i] - p[i + 1] } else { p[i] }).collect())
}

/// Constants of `lambda(pga) = alpha exp(beta / ln(pga / gamma))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardCurveParams {
    pub alpha_h: f64,
    pub beta_h: f64,
    pub gamma_h: f64,
}

impl Default for HazardCurveParams {
    fn default() -> Self {
        HazardCurveParams { alpha_h: 63.728, beta_h: 42.475, gamma_h: 35.404 }
    }
}

impl HazardCurveParams {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.alpha_h > 0.0 && self.gamma_h > 0.0 && self.beta_h.is_finite()) {
            return Err(RiskError::Config(format!("invalid hazard constants {self:?}")));
        }
        Ok(())
    }

    fn log_ratio(&self, pga: f64) -> Result<f64, RiskError> {
        self.validate()?;
        if !(pga > 0.0 && pga < self.gamma_h) {
            return Err(RiskError::Domain(format!("pga {pga} outside the hazard domain (0, {})", self.gamma_h)));
        }
        Ok((pga / self.gamma_h).ln())
    }

    /// `d lambda / d pga`.
    pub fn derivative(&self, pga: f64) -> Result<f64, RiskError> {
        let l = self.log_ratio(pga)?;
        let lam = self.alpha_h * (self.beta_h / l).exp();
        Ok(-lam * self.beta_h / (l * l * pga))
    }
}

/// Annual exceedance rate of `pga`.
pub fn hazard_rate(pga: f64, params: &HazardCurveParams) -> Result<f64, RiskError> {
    let l = params.log_ratio(pga)?;
    Ok(params.alpha_h * (params.beta_h / l).exp())
}

const FIT_MAX_ITER: usize = 200;
const FIT_STEP_TOL: f64 = 1e-10;

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least squares on log rates over `(ln alpha, beta, ln gamma)` with
/// Gauss-Newton steps and backtracking.
pub fn fit_hazard_curve(points: &[(f64, f64)]) -> Result<HazardCurveParams, RiskError> {
    if points.len() < 4 {
        return Err(RiskError::Domain(format!("hazard fit needs at least 4 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(RiskError::Domain(format!("non-positive hazard point {p:?}")));
    }
    if points.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(RiskError::Domain("hazard points must be sorted by ascending pga".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let x_max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let residuals = |t: &[f64; 3]| -> Option<Vec<f64>> {
        if t[2] <= x_max {
            return None;
        }
        Some(xs.iter().zip(&ys).map(|(x, y)| t[0] + t[1] / (x - t[2]) - y).collect())
    };
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let ln_gamma0 = x_max + 10f64.ln();
    let inv: Vec<(f64, f64)> = xs.iter().zip(&ys).map(|(x, y)| (1.0 / (x - ln_gamma0), *y)).collect();
    let n = inv.len() as f64;
    let um = inv.iter().map(|p| p.0).sum::<f64>() / n;
    let vm = inv.iter().map(|p| p.1).sum::<f64>() / n;
    let suu: f64 = inv.iter().map(|p| (p.0 - um).powi(2)).sum();
    let suv: f64 = inv.iter().map(|p| (p.0 - um) * (p.1 - vm)).sum();
    let beta0 = if suu > 0.0 { suv / suu } else { 0.0 };
    let mut theta = [vm - beta0 * um, beta0, ln_gamma0];

    let mut r = residuals(&theta).expect("initial gamma lies beyond every point");
    let mut c = cost(&r);
    for _ in 0..FIT_MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (x, ri) in xs.iter().zip(&r) {
            let l = x - theta[2];
            let row = [1.0, 1.0 / l, theta[1] / (l * l)];
            for i in 0..3 {
                jtr[i] += row[i] * ri;
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let Some(step) = solve3(jtj, jtr.map(|v| -v)) else {
            return Err(RiskError::Fit { iterations: 0, residual: (c / n).sqrt() });
        };
        let norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < FIT_STEP_TOL {
            return Ok(HazardCurveParams { alpha_h: theta[0].exp(), beta_h: theta[1], gamma_h: theta[2].exp() });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = [theta[0] + t * step[0], theta[1] + t * step[1], theta[2] + t * step[2]];
            if let Some(rt) = residuals(&trial) {
                let ct = cost(&rt);
                if ct <= c {
                    theta = trial;
                    r = rt;
                    c = ct;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(RiskError::Fit { iterations: FIT_MAX_ITER, residual: (c / n).sqrt() })
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, RiskError> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(RiskError::Config(format!("invalid log grid [{lo}, {hi}] with {n} points")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect())
}

pub fn default_im_grid() -> Vec<f64> {
    log_grid(0.01, 3.0, 200).expect("static grid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub im: f64,
    pub exceedance: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub integrand: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub states: Vec<String>,
    pub rows: Vec<LossRow>,
    pub slr: f64,
}

impl LossTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("im");
        for n in &self.states {
            write!(s, ",exceed_{n}").unwrap();
        }
        for n in &self.states {
            write!(s, ",occupy_{n}").unwrap();
        }
        s.push_str(",integrand,cumulative_slr\n");
        for r in &self.rows {
            write!(s, "{:.6e}", r.im).unwrap();
            for v in r.exceedance.iter().chain(&r.occupancy) {
                write!(s, ",{v:.9e}").unwrap();
            }
            writeln!(s, ",{:.9e},{:.9e}", r.integrand, r.cumulative).unwrap();
        }
        s
    }
}

/// Trapezoidal loss integral for an arbitrary exceedance function.
pub fn loss_table_with<F>(
    states: &[String],
    damage_ratios: &[f64],
    exceedance: F,
    hazard: &HazardCurveParams,
    im_grid: &[f64],
) -> Result<LossTable, RiskError>
where
    F: Fn(f64) -> Result<Vec<f64>, RiskError>,
{
    if im_grid.len() < 2 {
        return Err(RiskError::Config("loss integration grid needs at least 2 points".into()));
    }
    if im_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RiskError::Domain("im grid must be strictly ascending".into()));
    }
    let mut rows: Vec<LossRow> = Vec::with_capacity(im_grid.len());
    for &im in im_grid {
        let slope = hazard.derivative(im)?.abs();
        let exc = exceedance(im)?;
        if exc.len() != damage_ratios.len() {
            return Err(RiskError::Config(format!(
                "{} exceedance values for {} damage ratios",
                exc.len(),
                damage_ratios.len()
            )));
        }
        let occ = in_state_probabilities(&exc)?;
        let expected: f64 = occ.iter().zip(damage_ratios).map(|(p, d)| p * d).sum();
        let integrand = expected * slope;
        let cumulative = match rows.last() {
            Some(prev) => prev.cumulative + 0.5 * (prev.integrand + integrand) * (im - prev.im),
            None => 0.0,
        };
        rows.push(LossRow { im, exceedance: exc, occupancy: occ, integrand, cumulative });
    }
    let slr = rows.last().map_or(0.0, |r| r.cumulative);
    Ok(LossTable { states: states.to_vec(), rows, slr })
}

pub fn loss_table(
    fragility: &FragilityModel,
    hazard: &HazardCurveParams,
    im_grid: &[f64],
) -> Result<LossTable, RiskError> {
    fragility.validate()?;
    let names: Vec<String> = fragility.states.iter().map(|s| s.name.clone()).collect();
    loss_table_with(&names, &fragility.damage_ratios(), |im| fragility.exceedance(im), hazard, im_grid)
}

/// Expected annual loss ratio.
pub fn seismic_loss_ratio(
    fragility: &FragilityModel,
    hazard: &HazardCurveParams,
    im_grid: &[f64],
) -> Result<f64, RiskError> {
    Ok(loss_table(fragility, hazard, im_grid)?.slr)
}
