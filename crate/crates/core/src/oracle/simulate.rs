use serde::{Deserialize, Serialize};

use super::model::{Bilinear, PlasticState, ReducedBridgeModel, GRAVITY};
use super::OracleError;
use crate::gm::GroundMotion;

const NEWMARK_GAMMA: f64 = 0.5;
const NEWMARK_BETA: f64 = 0.25;
const MAX_NEWTON_ITERS: usize = 50;
pub const MAX_DT: f64 = 0.05;

/// Response channels of one bridge under one record, aligned with the
/// excitation samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHistory {
    pub dt: f64,
    /// Column drift ratio, %.
    pub drift_ratio: Vec<f64>,
    /// kN
    pub column_force: Vec<f64>,
    /// Bearing deformation, mm.
    pub bearing_disp: Vec<f64>,
    /// Force in one bearing line, kN.
    pub bearing_force: Vec<f64>,
    /// Cumulative dissipated energy, kN*mm.
    pub column_energy: Vec<f64>,
    pub bearing_energy: Vec<f64>,
}

impl ResponseHistory {
    pub fn len(&self) -> usize {
        self.drift_ratio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drift_ratio.is_empty()
    }

    /// Column displacement in m, recovered from drift.
    pub fn column_disp(&self, column_height: f64) -> Vec<f64> {
        self.drift_ratio.iter().map(|d| d * column_height / 100.0).collect()
    }

    /// Rebuilds the energy channels from the force and deformation channels.
    pub fn from_channels(
        dt: f64,
        drift_ratio: Vec<f64>,
        column_force: Vec<f64>,
        bearing_disp: Vec<f64>,
        bearing_force: Vec<f64>,
        column_height: f64,
    ) -> Self {
        let col_disp_mm: Vec<f64> = drift_ratio.iter().map(|d| d * column_height * 10.0).collect();
        let column_energy = cumulative_dissipated(&column_force, &col_disp_mm);
        let bearing_energy = cumulative_dissipated(&bearing_force, &bearing_disp);
        ResponseHistory {
            dt,
            drift_ratio,
            column_force,
            bearing_disp,
            bearing_force,
            column_energy,
            bearing_energy,
        }
    }

    pub fn channel(&self, c: ResponseChannel) -> &[f64] {
        match c {
            ResponseChannel::DriftRatio => &self.drift_ratio,
            ResponseChannel::ColumnForce => &self.column_force,
            ResponseChannel::BearingDisp => &self.bearing_disp,
            ResponseChannel::BearingForce => &self.bearing_force,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseChannel {
    DriftRatio,
    ColumnForce,
    BearingDisp,
    BearingForce,
}

impl ResponseChannel {
    pub const ALL: [ResponseChannel; 4] = [
        ResponseChannel::DriftRatio,
        ResponseChannel::ColumnForce,
        ResponseChannel::BearingDisp,
        ResponseChannel::BearingForce,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ResponseChannel::DriftRatio => "drift_ratio",
            ResponseChannel::ColumnForce => "column_force",
            ResponseChannel::BearingDisp => "bearing_disp",
            ResponseChannel::BearingForce => "bearing_force",
        }
    }
}

fn trapezoid_work(force: &[f64], disp: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(force.len());
    let mut acc = 0.0;
    w.push(0.0);
    for i in 1..force.len() {
        acc += 0.5 * (force[i] + force[i - 1]) * (disp[i] - disp[i - 1]);
        w.push(acc);
    }
    w
}

/// Running dissipated energy: the lower monotone envelope (suffix minimum)
/// of the trapezoidal work, so recoverable elastic work never shows up and
/// the last entry equals the total work.
pub fn cumulative_dissipated(force: &[f64], disp: &[f64]) -> Vec<f64> {
    if force.is_empty() {
        return Vec::new();
    }
    let mut w = trapezoid_work(force, disp);
    for i in (0..w.len() - 1).rev() {
        if w[i + 1] < w[i] {
            w[i] = w[i + 1];
        }
    }
    w
}

/// Total trapezoidal work of `force` (kN) over `disp` (m), kN*m.
pub fn hysteretic_energy(force: &[f64], disp: &[f64]) -> Result<f64, OracleError> {
    if force.len() != disp.len() {
        return Err(OracleError::Domain(format!(
            "force has {} samples but displacement has {}",
            force.len(),
            disp.len()
        )));
    }
    if force.len() < 2 {
        return Err(OracleError::Domain("need at least two samples".into()));
    }
    Ok(*cumulative_dissipated(force, disp).last().unwrap())
}

#[derive(Debug, Clone, Copy, Default)]
struct ElementStates {
    column: PlasticState,
    bearing: PlasticState,
}

struct Resistance {
    column: f64,
    bearing: f64,
    gap: f64,
    tangent: f64,
    next: ElementStates,
}

impl Resistance {
    fn total(&self, n_bearings: usize) -> f64 {
        self.column + n_bearings as f64 * self.bearing + self.gap
    }
}

fn resist(model: &ReducedBridgeModel, st: &ElementStates, u: f64) -> Resistance {
    let col = Bilinear {
        k: model.column.k_effective(),
        f_y: model.column.f_y,
        ratio: model.column.hardening_ratio,
    };
    let brg = Bilinear { k: model.bearing.k_elastic, f_y: model.bearing.f_slip, ratio: 0.0 };
    let (fc, kc, sc) = col.respond(&st.column, u);
    let (fb, kb, sb) = brg.respond(&st.bearing, u);
    let (fg, kg) = model.gap.respond(&model.piles, u);
    Resistance {
        column: fc,
        bearing: fb,
        gap: fg,
        tangent: kc + model.n_bearings as f64 * kb + kg,
        next: ElementStates { column: sc, bearing: sb },
    }
}

/// Integrates the model from rest under `gm`.
pub fn simulate_response(model: &ReducedBridgeModel, gm: &GroundMotion) -> Result<ResponseHistory, OracleError> {
    simulate_from(model, gm, 0.0, 0.0)
}

/// Integrates from an elastic initial displacement `u0` (m) and velocity
/// `v0` (m/s). Average-acceleration Newmark with Newton equilibrium
/// iterations at every step.
pub fn simulate_from(
    model: &ReducedBridgeModel,
    gm: &GroundMotion,
    u0: f64,
    v0: f64,
) -> Result<ResponseHistory, OracleError> {
    if gm.accel.is_empty() {
        return Err(OracleError::Domain("empty ground motion".into()));
    }
    if !(gm.dt > 0.0 && gm.dt <= MAX_DT + 1e-12) {
        return Err(OracleError::Domain(format!("dt = {} exceeds {MAX_DT} s", gm.dt)));
    }
    let m = model.mass;
    let c = model.damping_coefficient();
    let dt = gm.dt;
    let (g, b) = (NEWMARK_GAMMA, NEWMARK_BETA);
    let n = gm.accel.len();
    let nb = model.n_bearings;

    let load = |i: usize| -m * gm.accel[i] * GRAVITY;
    let peak_load = gm.accel.iter().fold(0.0f64, |a, x| a.max((m * x * GRAVITY).abs()));
    let tol = 1e-6 * peak_load.max(1.0);

    let mut states = ElementStates::default();
    let r0 = resist(model, &states, u0);
    if r0.next.column != states.column || r0.next.bearing != states.bearing {
        return Err(OracleError::Domain("initial displacement must be elastic".into()));
    }
    let mut u = u0;
    let mut v = v0;
    let mut a = (load(0) - c * v - r0.total(nb)) / m;

    let mut col_f = Vec::with_capacity(n);
    let mut brg_f = Vec::with_capacity(n);
    let mut disp = Vec::with_capacity(n);
    col_f.push(r0.column);
    brg_f.push(r0.bearing);
    disp.push(u);

    let c1 = 1.0 / (b * dt * dt);
    let c2 = g / (b * dt);
    for i in 1..n {
        let p = load(i);
        let mut un = u;
        let mut converged = None;
        for _ in 0..MAX_NEWTON_ITERS {
            let an = c1 * (un - u) - v / (b * dt) - (0.5 / b - 1.0) * a;
            let vn = v + dt * ((1.0 - g) * a + g * an);
            let r = resist(model, &states, un);
            let res = m * an + c * vn + r.total(nb) - p;
            if !res.is_finite() {
                return Err(OracleError::Simulation { step: i, msg: "non-finite residual".into() });
            }
            if res.abs() < tol {
                converged = Some((an, vn, r));
                break;
            }
            let kt = m * c1 + c * c2 + r.tangent;
            un -= res / kt;
        }
        let (an, vn, r) = converged.ok_or(OracleError::Simulation {
            step: i,
            msg: format!("Newton iteration did not converge in {MAX_NEWTON_ITERS} iterations"),
        })?;
        u = un;
        v = vn;
        a = an;
        states = r.next;
        col_f.push(r.column);
        brg_f.push(r.bearing);
        disp.push(u);
    }

    let h = model.column_height;
    let drift: Vec<f64> = disp.iter().map(|x| x / h * 100.0).collect();
    let bearing_mm: Vec<f64> = disp.iter().map(|x| x * 1e3).collect();
    let out = ResponseHistory::from_channels(dt, drift, col_f, bearing_mm, brg_f, h);
    if out.drift_ratio.iter().chain(&out.column_force).any(|x| !x.is_finite()) {
        return Err(OracleError::Simulation { step: n - 1, msg: "non-finite response".into() });
    }
    Ok(out)
}

/// Simulates on a grid `substeps` times finer than the record and returns
/// the response at the record's samples.
pub fn simulate_substepped(
    model: &ReducedBridgeModel,
    gm: &GroundMotion,
    substeps: usize,
) -> Result<ResponseHistory, OracleError> {
    let substeps = substeps.max(1);
    if substeps == 1 {
        return simulate_response(model, gm);
    }
    let fine = crate::gm::trim_resample(gm, gm.duration(), gm.dt / substeps as f64)
        .map_err(|e| OracleError::Domain(e.to_string()))?;
    let r = simulate_response(model, &fine)?;
    let pick = |v: &Vec<f64>| -> Vec<f64> { v.iter().step_by(substeps).take(gm.len()).copied().collect() };
    Ok(ResponseHistory {
        dt: gm.dt,
        drift_ratio: pick(&r.drift_ratio),
        column_force: pick(&r.column_force),
        bearing_disp: pick(&r.bearing_disp),
        bearing_force: pick(&r.bearing_force),
        column_energy: pick(&r.column_energy),
        bearing_energy: pick(&r.bearing_energy),
    })
}
