//! Euler–Lagrange integration of regular systems, invariant monitoring and
//! comparison of regularized runs against reference dynamics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chart::ChartSpec;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::forms::{self, LagrangianSystem};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Rk45,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub method: Method,
    /// Fixed step (rk4) or initial step (rk45).
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Largest admissible condition number of the velocity Hessian.
    pub max_condition: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { method: Method::Rk45, step: 1e-2, rtol: 1e-9, atol: 1e-12, max_condition: 1e12 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    /// `E_L` (autonomous charts only).
    pub energy: Option<f64>,
    /// `‖(μ, μ̇)‖` (zero on un-thickened charts).
    pub mu_norm: f64,
    pub hessian_condition: f64,
}

/// Accepted steps of one run, including the initial state.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    #[serde(skip)]
    pub chart: Option<Arc<ChartSpec>>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }
}

/// Velocity-field evaluation: the SODE vector field and the Hessian conditioning.
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub field: DVector<f64>,
    pub condition: f64,
    pub sigma_min: f64,
}

/// `X = v ∂_q + a ∂_v (+ ∂_t)` with `W a = ∂L/∂q − ∂²L/∂v∂q v − ∂²L/∂v∂t`.
pub fn euler_lagrange_field(sys: &LagrangianSystem, point: &[f64], max_condition: f64) -> Result<FieldEval> {
    let chart = &sys.chart;
    let d = sys.lagrangian.second_order(point)?;
    let base = chart.base_indices();
    let vel = chart.velocity_indices();
    let t = chart.time_index();
    let m = base.len();
    let w = DMatrix::from_fn(m, m, |i, j| d.hessian[(vel[i], vel[j])]);
    let rhs = DVector::from_fn(m, |i, _| {
        let mut s = d.gradient[base[i]];
        for (j, &q) in base.iter().enumerate() {
            s -= d.hessian[(vel[i], q)] * point[vel[j]];
        }
        if let Some(t) = t {
            s -= d.hessian[(vel[i], t)];
        }
        s
    });
    let sv = linalg::singular_values(&w);
    let sigma_min = sv.last().copied().unwrap_or(1.0);
    let condition = if m == 0 { 1.0 } else { linalg::condition_number(&w) };
    let time = t.map_or(f64::NAN, |t| point[t]);
    if !(condition <= max_condition) {
        return Err(Error::SingularHessianAlongTrajectory { time, sigma_min });
    }
    let acc = if m == 0 { DVector::zeros(0) } else { w.lu().solve(&rhs).ok_or(Error::SingularHessianAlongTrajectory { time, sigma_min })? };
    let mut field = DVector::zeros(chart.dim());
    for i in 0..m {
        field[base[i]] = point[vel[i]];
        field[vel[i]] = acc[i];
    }
    if let Some(t) = t {
        field[t] = 1.0;
    }
    Ok(FieldEval { field, condition, sigma_min })
}

fn diagnostics(sys: &LagrangianSystem, y: &[f64], condition: f64) -> Result<StepDiagnostics> {
    let (mu, mudot) = sys.chart.thickening_indices();
    let mu_norm = mu.iter().chain(&mudot).fold(0.0, |acc, &i| acc + y[i] * y[i]).sqrt();
    let energy = if sys.autonomous { Some(forms::energy(sys, y)?) } else { None };
    Ok(StepDiagnostics { energy, mu_norm, hessian_condition: condition })
}

struct Runner<'a> {
    sys: &'a LagrangianSystem,
    opts: IntegratorOptions,
    time_index: Option<usize>,
}

impl Runner<'_> {
    fn f(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let mut p = y.as_slice().to_vec();
        if let Some(ti) = self.time_index {
            p[ti] = t;
        }
        euler_lagrange_field(self.sys, &p, self.opts.max_condition).map(|e| e.field).map_err(|e| match e {
            Error::SingularHessianAlongTrajectory { sigma_min, .. } => Error::SingularHessianAlongTrajectory { time: t, sigma_min },
            other => other,
        })
    }

    fn rk4_step(&self, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let k1 = self.f(t, y)?;
        let k2 = self.f(t + h / 2.0, &(y + &k1 * (h / 2.0)))?;
        let k3 = self.f(t + h / 2.0, &(y + &k2 * (h / 2.0)))?;
        let k4 = self.f(t + h, &(y + &k3 * h))?;
        Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }

    /// Dormand–Prince 5(4): fifth-order solution and error estimate.
    fn dp_step(&self, t: f64, y: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [&[f64]; 7] = [
            &[],
            &[1.0 / 5.0],
            &[3.0 / 40.0, 9.0 / 40.0],
            &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
            &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
            &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
            &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
        const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, a) in A[s].iter().enumerate() {
                if *a != 0.0 {
                    ys += &k[j] * (h * a);
                }
            }
            k.push(self.f(t + C[s] * h, &ys)?);
        }
        let mut y5 = y.clone();
        let mut err = DVector::zeros(y.len());
        for s in 0..7 {
            y5 += &k[s] * (h * B5[s]);
            err += &k[s] * (h * (B5[s] - B4[s]));
        }
        Ok((y5, err))
    }
}

/// Integrates the Euler–Lagrange field of a regular system over `t_span`.
/// On jet charts the time coordinate is slaved to the integration time.
/// A zero-length span yields an empty record.
pub fn integrate(sys: &LagrangianSystem, initial: &[f64], t_span: (f64, f64), opts: &IntegratorOptions) -> Result<TrajectoryRecord> {
    let chart = sys.chart.clone();
    if initial.len() != chart.dim() {
        return Err(Error::DimensionMismatch { expected: chart.dim(), found: initial.len() });
    }
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::config("t_span", "need finite t0 <= t1"));
    }
    if !(opts.step > 0.0) || !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::config("integrator", "step, rtol and atol must be positive"));
    }
    let mut record = TrajectoryRecord { chart: Some(chart.clone()), times: Vec::new(), states: Vec::new(), diagnostics: Vec::new() };
    if t1 == t0 {
        return Ok(record);
    }
    let runner = Runner { sys, opts: *opts, time_index: chart.time_index() };
    let mut y = DVector::from_column_slice(initial);
    if let Some(ti) = runner.time_index {
        y[ti] = t0;
    }
    let first = euler_lagrange_field(sys, y.as_slice(), opts.max_condition)
        .map_err(|e| if let Error::SingularHessianAlongTrajectory { sigma_min, .. } = e { Error::SingularHessianAlongTrajectory { time: t0, sigma_min } } else { e })?;
    let push = |rec: &mut TrajectoryRecord, t: f64, y: &DVector<f64>| -> Result<()> {
        let cond = euler_lagrange_field(sys, y.as_slice(), f64::INFINITY)?.condition;
        rec.times.push(t);
        rec.states.push(y.as_slice().to_vec());
        rec.diagnostics.push(diagnostics(sys, y.as_slice(), cond)?);
        Ok(())
    };
    record.times.push(t0);
    record.states.push(y.as_slice().to_vec());
    record.diagnostics.push(diagnostics(sys, y.as_slice(), first.condition)?);
    let span = t1 - t0;
    match opts.method {
        Method::Rk4 => {
            let n = ((span / opts.step) - 1e-9).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for k in 0..n {
                let t = t0 + k as f64 * h;
                y = runner.rk4_step(t, &y, h)?;
                let tn = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * h };
                if let Some(ti) = runner.time_index {
                    y[ti] = tn;
                }
                push(&mut record, tn, &y)?;
            }
        }
        Method::Rk45 => {
            let mut t = t0;
            let mut h = opts.step.min(span);
            while t < t1 {
                let min_step = 1e-14 * t.abs().max(1.0);
                if h < min_step {
                    return Err(Error::StepUnderflow(h));
                }
                let last = t + h >= t1;
                let hh = if last { t1 - t } else { h };
                let (y5, err) = match runner.dp_step(t, &y, hh) {
                    Ok(r) => r,
                    Err(Error::SingularHessianAlongTrajectory { time, sigma_min }) => {
                        // Rejected step; shrink until the step underflows.
                        if hh / 2.0 < min_step {
                            return Err(Error::SingularHessianAlongTrajectory { time, sigma_min });
                        }
                        h = hh / 2.0;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mut acc = 0.0;
                for i in 0..y.len() {
                    let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
                    acc += (err[i] / sc).powi(2);
                }
                let e = (acc / y.len() as f64).sqrt();
                if e <= 1.0 {
                    t = if last { t1 } else { t + hh };
                    y = y5;
                    if let Some(ti) = runner.time_index {
                        y[ti] = t;
                    }
                    push(&mut record, t, &y)?;
                }
                let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                h = (hh * factor).min(span);
            }
        }
    }
    Ok(record)
}

/// Reference dynamics in original-chart coordinates.
pub enum Reference<'a> {
    Trajectory(&'a TrajectoryRecord),
    Analytic(&'a (dyn Fn(f64) -> Vec<f64> + Sync)),
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    /// `max_t ‖(μ, μ̇)‖`.
    pub max_mu_norm: f64,
    /// `max_t max_i |z_i(t) − z_i^ref(t)|` over original coordinates.
    pub max_original_deviation: f64,
    pub mu_norm: Vec<f64>,
    pub original_deviation: Vec<f64>,
}

/// Linear interpolation of a recorded trajectory at `t` (clamped to its span).
pub fn interpolate(rec: &TrajectoryRecord, t: f64) -> Option<Vec<f64>> {
    if rec.is_empty() {
        return None;
    }
    let k = rec.times.partition_point(|&s| s < t);
    if k == 0 {
        return Some(rec.states[0].clone());
    }
    if k >= rec.len() {
        return Some(rec.states[rec.len() - 1].clone());
    }
    let (ta, tb) = (rec.times[k - 1], rec.times[k]);
    let w = (t - ta) / (tb - ta);
    Some(rec.states[k - 1].iter().zip(&rec.states[k]).map(|(a, b)| a + w * (b - a)).collect())
}

/// Transverse drift and original-coordinate deviation of a (thickened) run.
pub fn compare_projection(traj: &TrajectoryRecord, reference: Reference<'_>) -> Result<DeviationReport> {
    let chart = traj.chart.as_ref().ok_or_else(|| Error::ChartMismatch("trajectory carries no chart".into()))?;
    let n0 = chart.original_dim();
    if let Reference::Trajectory(r) = &reference {
        if let Some(s) = r.states.first() {
            if s.len() != n0 {
                return Err(Error::ChartMismatch(format!("reference has {} coordinates, expected {n0}", s.len())));
            }
        }
    }
    let mut rep = DeviationReport { max_mu_norm: 0.0, max_original_deviation: 0.0, mu_norm: Vec::new(), original_deviation: Vec::new() };
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let mu = s[n0..].iter().fold(0.0, |acc, x| acc + x * x).sqrt();
        let r = match &reference {
            Reference::Trajectory(r) => interpolate(r, *t).unwrap_or_else(|| s[..n0].to_vec()),
            Reference::Analytic(f) => f(*t),
        };
        if r.len() != n0 {
            return Err(Error::ChartMismatch(format!("reference has {} coordinates, expected {n0}", r.len())));
        }
        let dev = s[..n0].iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.max_mu_norm = rep.max_mu_norm.max(mu);
        rep.max_original_deviation = rep.max_original_deviation.max(dev);
        rep.mu_norm.push(mu);
        rep.original_deviation.push(dev);
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    /// `|E_L(t) − E_L(t₀)|` per step (empty on jet charts).
    pub energy_drift: Vec<f64>,
    pub max_energy_drift: f64,
    pub max_sode_residual: f64,
    /// Declared constraint values, one row per step.
    pub constraint_values: Vec<Vec<f64>>,
}

pub const SODE_TOL: f64 = 1e-12;

pub fn monitor_invariants(sys: &LagrangianSystem, traj: &TrajectoryRecord, constraints: &[Expression]) -> Result<InvariantReport> {
    let mut rep = InvariantReport { energy_drift: Vec::new(), max_energy_drift: 0.0, max_sode_residual: 0.0, constraint_values: Vec::new() };
    let e0 = match traj.states.first() {
        Some(s) if sys.autonomous => Some(forms::energy(sys, s)?),
        _ => None,
    };
    for s in &traj.states {
        if let Some(e0) = e0 {
            let d = (forms::energy(sys, s)? - e0).abs();
            rep.max_energy_drift = rep.max_energy_drift.max(d);
            rep.energy_drift.push(d);
        }
        let x = euler_lagrange_field(sys, s, f64::INFINITY)?.field;
        rep.max_sode_residual = rep.max_sode_residual.max(forms::sode_residual(&x, &sys.chart, s));
        rep.constraint_values.push(constraints.iter().map(|c| c.eval(s)).collect::<Result<_>>()?);
    }
    debug_assert!(rep.max_sode_residual <= SODE_TOL);
    Ok(rep)
}
