//! Subcommand implementations behind the `lagreg` binary. Every command
//! returns a serializable report; the binary only handles I/O and exit codes.

use std::io::Write;

use lagreg_core::catalog::{Expected, Scenario};
use lagreg_core::constraints::{self, ConsistencyReport, KernelReport, PcaRun};
use lagreg_core::dynamics::{self, Method, Reference, TrajectoryRecord};
use lagreg_core::regularizer::{self, CoisotropyReport, Hypothesis, RegularityReport, RegularizedSystem};
use lagreg_core::{forms, linalg, par, Error, Expression};
use serde::Serialize;

/// Tolerance of the complete-lift detector.
pub const LIFT_TOL: f64 = 1e-6;
/// Residual bound of the metric consistency conditions.
pub const CONSISTENCY_TOL: f64 = 1e-12;
/// Tolerance of the constraint algorithm on samples.
pub const PCA_TOL: f64 = 1e-9;
pub const PCA_MAX_ITER: usize = 5;
/// Relative singular-value floor for regularity of `L̃`.
pub const REGULARITY_TOL: f64 = 1e-9;
/// μ-shell radii probed around each zero-section sample.
pub const SHELL_RADII: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Config = 2,
    Verification = 3,
    Integration = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Default classification; integration failures are tagged at the call site.
pub fn classify(e: &Error) -> ExitStatus {
    match e {
        Error::Syntax { .. }
        | Error::UnknownIdentifier(_)
        | Error::Config { .. }
        | Error::UnknownScenario(_)
        | Error::ShapeMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::ChartMismatch(_) => ExitStatus::Config,
        Error::SingularHessianAlongTrajectory { .. } | Error::StepUnderflow(_) => ExitStatus::Integration,
        _ => ExitStatus::Verification,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { status: classify(&e), message: e.to_string() }
    }
}

/// A failed operation recorded inside a report instead of aborting it.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorEntry {
    pub operation: String,
    pub message: String,
}

impl ErrorEntry {
    fn new(operation: &str, e: &Error) -> Self {
        ErrorEntry { operation: operation.into(), message: e.to_string() }
    }
}

/// Deterministic JSON: struct field order and shortest round-trip floats.
pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

fn samples(scn: &Scenario) -> Result<Vec<Vec<f64>>, CliError> {
    Ok(scn.sampling.sample(scn.chart())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub scenario: String,
    pub coordinates: Vec<String>,
    pub seed: u64,
    pub sample_count: usize,
    /// Common rank of the characteristic distribution, `None` if it varies.
    pub kernel_rank: Option<usize>,
    pub complete_lift: Option<bool>,
    pub consistent: Option<bool>,
    pub failing_condition: Option<usize>,
    pub regular: bool,
    pub kernel_ranks: Vec<usize>,
    pub hessian_ranks: Vec<usize>,
    pub lift: Option<KernelReport>,
    pub primary_constraints: Option<Vec<Vec<f64>>>,
    pub consistency: Option<ConsistencyReport>,
    pub pca: Option<PcaRun>,
    pub expected: Option<Expected>,
    pub errors: Vec<ErrorEntry>,
}

pub fn cmd_analyze(scn: &Scenario) -> Result<AnalyzeReport, CliError> {
    let sys = &scn.system;
    let pts = samples(scn)?;
    let dt = forms::dt_covector(scn.chart());
    let ranks = par::try_map(&pts, |_, p| {
        let omega = forms::omega_matrix(sys, p)?;
        let k = constraints::kernel_basis(&omega, dt.as_ref(), linalg::RANK_TOL).rank;
        let (_, h) = forms::hessian_rank(sys, p, linalg::RANK_TOL)?;
        Ok::<_, Error>((k, h))
    })?;
    let kernel_ranks: Vec<usize> = ranks.iter().map(|r| r.0).collect();
    let kernel_rank = match kernel_ranks.first() {
        Some(&k) if kernel_ranks.iter().all(|&x| x == k) => Some(k),
        _ => None,
    };
    let mut errors = Vec::new();
    let lift = match constraints::detect_complete_lift(sys, &pts, LIFT_TOL) {
        Ok(r) => Some(r),
        Err(e) => {
            errors.push(ErrorEntry::new("detect_complete_lift", &e));
            None
        }
    };
    let primary = if sys.autonomous {
        match par::try_map(&pts, |_, p| constraints::primary_constraints(sys, p)) {
            Ok(v) => Some(v),
            Err(e) => {
                errors.push(ErrorEntry::new("primary_constraints", &e));
                None
            }
        }
    } else {
        None
    };
    let consistency = match &scn.metric {
        Some(m) => match constraints::degenerate_metric_consistency(m, scn.kernel_field.as_deref(), &pts) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(ErrorEntry::new("degenerate_metric_consistency", &e));
                None
            }
        },
        None => None,
    };
    let pca = if sys.autonomous && !pts.is_empty() {
        let (omega, dh) = constraints::lagrangian_fields(sys);
        match constraints::run_pca(&omega, &dh, &pts, PCA_MAX_ITER, PCA_TOL) {
            Ok(r) => Some(r),
            Err(e) => {
                errors.push(ErrorEntry::new("run_pca", &e));
                None
            }
        }
    } else {
        None
    };
    // Metric data decide via the consistency conditions; otherwise the
    // equations are consistent when the constraint algorithm adds nothing.
    let (consistent, failing_condition) = match (&consistency, &pca) {
        (Some(c), _) => (Some(c.consistent(CONSISTENCY_TOL)), c.failing_condition(CONSISTENCY_TOL)),
        (None, Some(p)) => (Some(p.stabilized_at == Some(1)), None),
        _ => (None, None),
    };
    Ok(AnalyzeReport {
        scenario: scn.name.clone(),
        coordinates: scn.chart().names().into_iter().map(String::from).collect(),
        seed: scn.sampling.seed,
        sample_count: pts.len(),
        kernel_rank,
        complete_lift: lift.as_ref().map(|l| l.is_complete_lift),
        consistent,
        failing_condition,
        regular: kernel_rank == Some(0),
        kernel_ranks,
        hessian_ranks: ranks.iter().map(|r| r.1).collect(),
        lift,
        primary_constraints: primary,
        consistency,
        pca,
        expected: scn.expected.clone(),
        errors,
    })
}

/// Result of one verification step: its report, or the error it raised.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome<T> {
    pub passed: bool,
    pub report: Option<T>,
    pub error: Option<String>,
}

impl<T> CheckOutcome<T> {
    fn from(r: lagreg_core::Result<T>) -> Self {
        match r {
            Ok(report) => CheckOutcome { passed: true, report: Some(report), error: None },
            Err(e) => CheckOutcome { passed: false, report: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestrictionSummary {
    pub max_value_deviation: f64,
    pub max_theta_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularizeReport {
    pub scenario: String,
    pub r: usize,
    /// `detected`, `declared` or `forced`.
    pub hypothesis: String,
    pub hypothesis_violation: Option<String>,
    pub note: Option<String>,
    pub coordinates: Vec<String>,
    pub lagrangian: String,
    pub correction: String,
    pub regularized_lagrangian: String,
    pub sample_count: usize,
    pub restriction: CheckOutcome<RestrictionSummary>,
    pub regularity: CheckOutcome<RegularityReport>,
    pub coisotropy: CheckOutcome<CoisotropyReport>,
    pub verified: bool,
}

impl RegularizeReport {
    pub fn status(&self) -> ExitStatus {
        if self.verified && self.hypothesis_violation.is_none() {
            ExitStatus::Success
        } else {
            ExitStatus::Verification
        }
    }
}

/// `L̃` for a scenario together with how its hypothesis was met.
pub struct Regularization {
    pub system: RegularizedSystem,
    pub hypothesis: &'static str,
    pub violation: Option<String>,
}

/// Builds `L̃`, gating on complete-lift detection unless the split is declared.
/// With `force`, a violated hypothesis is recorded instead of returned.
pub fn regularize(scn: &Scenario, pts: &[Vec<f64>], force: bool) -> Result<Regularization, CliError> {
    let sys = &scn.system;
    let (ap, conn) = (&scn.almost_product, &scn.connection);
    if scn.declared_split {
        let system = regularizer::build_regularized_lagrangian(sys, ap, conn, Hypothesis::Declared)?;
        return Ok(Regularization { system, hypothesis: "declared", violation: None });
    }
    let detected = constraints::detect_complete_lift(sys, pts, LIFT_TOL).and_then(|k| regularizer::build_regularized_lagrangian(sys, ap, conn, Hypothesis::Detected(&k)));
    match detected {
        Ok(system) => Ok(Regularization { system, hypothesis: "detected", violation: None }),
        Err(e @ (Error::HypothesisViolated(_) | Error::RankNotConstant(_))) if force => {
            let system = regularizer::build_regularized_lagrangian(sys, ap, conn, Hypothesis::Declared)?;
            Ok(Regularization { system, hypothesis: "forced", violation: Some(e.to_string()) })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_regularize(scn: &Scenario, force: bool) -> Result<RegularizeReport, CliError> {
    let pts = samples(scn)?;
    let reg = regularize(scn, &pts, force)?;
    let rs = &reg.system;
    let zero: Vec<Vec<f64>> = pts.iter().map(|p| rs.thickened.embed(p)).collect::<lagreg_core::Result<_>>()?;
    let restriction = CheckOutcome::from(
        regularizer::restriction_check(rs, &zero).map(|r| RestrictionSummary { max_value_deviation: r.max_value_deviation(), max_theta_deviation: r.max_theta_deviation() }),
    );
    let regularity = CheckOutcome::from(regularizer::verify_regularity(rs, &zero, REGULARITY_TOL, &SHELL_RADII));
    let coisotropy = CheckOutcome::from(regularizer::coisotropy_check(rs, &zero));
    let r = rs.thickened.fiber_count();
    Ok(RegularizeReport {
        scenario: scn.name.clone(),
        r,
        hypothesis: reg.hypothesis.into(),
        hypothesis_violation: reg.violation,
        note: (r == 0).then(|| "r = 0: the system is already regular and L̃ = L".to_string()),
        coordinates: rs.thickened.chart.names().into_iter().map(String::from).collect(),
        lagrangian: rs.original.lagrangian.to_string(),
        correction: rs.correction.to_string(),
        regularized_lagrangian: rs.system.lagrangian.to_string(),
        sample_count: zero.len(),
        verified: restriction.passed && regularity.passed && coisotropy.passed,
        restriction,
        regularity,
        coisotropy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub scenario: String,
    pub regularized: bool,
    pub method: Method,
    pub t_span: (f64, f64),
    pub steps: usize,
    pub coordinates: Vec<String>,
    pub final_state: Option<Vec<f64>>,
    pub max_mu_norm: f64,
    pub max_energy_drift: f64,
    pub max_sode_residual: f64,
    pub max_hessian_condition: f64,
    /// Largest deviation from the declared reference, original coordinates.
    pub max_deviation: Option<f64>,
    /// Deviation from the reference at the last accepted step.
    pub final_state_error: Option<f64>,
    pub max_constraint_value: Option<f64>,
}

pub struct Simulation {
    pub summary: SimulateSummary,
    pub trajectory: TrajectoryRecord,
}

/// Integrates the scenario: directly when regular, otherwise `L̃` from
/// zero-section data.
pub fn cmd_simulate(scn: &Scenario, force: bool) -> Result<Simulation, CliError> {
    let sim = scn.simulation.as_ref().ok_or_else(|| CliError { status: ExitStatus::Config, message: format!("scenario `{}` declares no simulation", scn.name) })?;
    let pts = samples(scn)?;
    let degenerate = scn.chart().fiber_count() > 0;
    let (sys, initial, declared) = if degenerate {
        let reg = regularize(scn, &pts, force)?;
        let init = reg.system.thickened.embed(&sim.initial)?;
        let chart = reg.system.thickened.chart.clone();
        let declared: Vec<Expression> = scn.declared_constraints.iter().map(|c| c.rebind(&chart)).collect::<lagreg_core::Result<_>>()?;
        (reg.system.system, init, declared)
    } else {
        (scn.system.clone(), sim.initial.clone(), scn.declared_constraints.clone())
    };
    let integration = |e: Error| CliError { status: ExitStatus::Integration, message: e.to_string() };
    let traj = dynamics::integrate(&sys, &initial, sim.t_span, &sim.options).map_err(|e| match e {
        Error::Config { .. } | Error::DimensionMismatch { .. } => e.into(),
        other => integration(other),
    })?;
    let inv = dynamics::monitor_invariants(&sys, &traj, &declared).map_err(integration)?;
    let deviation = match &sim.reference {
        Some(f) => {
            let f = f.clone();
            let g = move |t: f64| f(t);
            Some(dynamics::compare_projection(&traj, Reference::Analytic(&g))?)
        }
        None => None,
    };
    let max_mu_norm = traj.diagnostics.iter().map(|d| d.mu_norm).fold(0.0, f64::max);
    let summary = SimulateSummary {
        scenario: scn.name.clone(),
        regularized: degenerate,
        method: sim.options.method,
        t_span: sim.t_span,
        steps: traj.len(),
        coordinates: sys.chart.names().into_iter().map(String::from).collect(),
        final_state: traj.last().map(|s| s.to_vec()),
        max_mu_norm,
        max_energy_drift: inv.max_energy_drift,
        max_sode_residual: inv.max_sode_residual,
        max_hessian_condition: traj.diagnostics.iter().map(|d| d.hessian_condition).fold(0.0, f64::max),
        max_deviation: deviation.as_ref().map(|d| d.max_original_deviation),
        final_state_error: deviation.as_ref().map(|d| d.original_deviation.last().copied().unwrap_or(0.0)),
        max_constraint_value: (!declared.is_empty()).then(|| inv.constraint_values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)),
    };
    Ok(Simulation { summary, trajectory: traj })
}

/// RFC-4180 trajectory: `t`, the chart coordinates, then step diagnostics.
/// On jet charts the `t` coordinate is the integration time and is not repeated.
pub fn write_csv<W: Write>(traj: &TrajectoryRecord, coordinates: &[String], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let lead = !coordinates.iter().any(|c| c == "t");
    let mut header = if lead { vec!["t".to_string()] } else { Vec::new() };
    header.extend(coordinates.iter().cloned());
    header.extend(["energy", "mu_norm", "hessian_condition"].map(String::from));
    w.write_record(&header)?;
    for ((t, s), d) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        let mut row = if lead { vec![t.to_string()] } else { Vec::new() };
        row.extend(s.iter().map(|v| v.to_string()));
        row.push(d.energy.map(|e| e.to_string()).unwrap_or_default());
        row.push(d.mu_norm.to_string());
        row.push(d.hessian_condition.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Caps the rayon pool at `LAGREG_THREADS` workers when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("LAGREG_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError { status: ExitStatus::Config, message: format!("LAGREG_THREADS must be a positive integer, got `{v}`") })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError { status: ExitStatus::Config, message: e.to_string() })?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
