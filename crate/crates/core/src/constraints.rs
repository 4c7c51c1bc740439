//! Kernels, complete-lift detection, primary constraints, the pre-symplectic
//! constraint algorithm on samples, the SODE defect projection and the
//! degenerate-metric consistency conditions.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chart::ChartSpec;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::forms::{self, LagrangianSystem};
use crate::geometry::SubspaceBasis;
use crate::linalg::{self, RANK_TOL};

/// Orthonormal basis of `ker ω`, or of `ker ω ∩ ker τ` when `tau` is given.
pub fn kernel_basis(omega: &DMatrix<f64>, tau: Option<&DVector<f64>>, tol: f64) -> SubspaceBasis {
    let m = match tau {
        Some(tau) => {
            let n = omega.ncols();
            let mut m = omega.clone().resize_vertically(n + 1, 0.0);
            m.row_mut(n).copy_from(&tau.transpose());
            m
        }
        None => omega.clone(),
    };
    SubspaceBasis::orthonormal(linalg::null_space(&m, tol))
}

/// Finite-difference step of the interpolation stencil used for the
/// complete-lift and involutivity checks.
pub const STENCIL_STEP: f64 = 1e-3;

/// Evidence gathered at one sample by [`detect_complete_lift`].
#[derive(Debug, Clone, Serialize)]
pub struct LiftEvidence {
    pub kernel_dim: usize,
    pub vertical_dim: usize,
    pub base_rank: usize,
    /// Gap between the vertical part (read on the base) and the base projection.
    pub projection_gap: f64,
    /// Distance of the complete lifts of the base generators from the kernel.
    pub lift_residual: f64,
    /// Change of the base distribution under a change of velocities.
    pub velocity_dependence: f64,
    /// Component of the generator brackets outside the distribution.
    pub involutivity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub is_complete_lift: bool,
    /// Half the kernel dimension (number of fiber directions).
    pub r: usize,
    pub evidence: Vec<LiftEvidence>,
    /// Reasons for a negative verdict.
    pub failures: Vec<String>,
    /// Orthonormal basis of the base distribution at the first sample.
    #[serde(skip)]
    pub base_distribution: DMatrix<f64>,
    #[serde(skip)]
    pub kernels: Vec<SubspaceBasis>,
}

fn kernel_at(sys: &LagrangianSystem, p: &[f64]) -> Result<DMatrix<f64>> {
    let omega = forms::omega_matrix(sys, p)?;
    let dt = forms::dt_covector(&sys.chart);
    Ok(kernel_basis(&omega, dt.as_ref(), RANK_TOL).basis)
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Orthonormal basis of the base projection of the kernel at `p`.
fn base_distribution(sys: &LagrangianSystem, p: &[f64]) -> Result<DMatrix<f64>> {
    let k = kernel_at(sys, p)?;
    Ok(linalg::column_space(&select_rows(&k, &sys.chart.base_indices()), RANK_TOL))
}

/// Generators `X_α(q) = Π_D(q) B₀_α`, smooth extensions of the basis `b0`.
fn generators(sys: &LagrangianSystem, p: &[f64], b0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = base_distribution(sys, p)?;
    Ok(linalg::projector(&d) * b0)
}

/// `(∂_k X^i_α)` for every generator, by central differences over coordinate `idx`.
fn generator_derivative(sys: &LagrangianSystem, p: &[f64], b0: &DMatrix<f64>, idx: usize) -> Result<DMatrix<f64>> {
    let mut plus = p.to_vec();
    let mut minus = p.to_vec();
    plus[idx] += STENCIL_STEP;
    minus[idx] -= STENCIL_STEP;
    Ok((generators(sys, &plus, b0)? - generators(sys, &minus, b0)?) / (2.0 * STENCIL_STEP))
}

fn evidence_at(sys: &LagrangianSystem, p: &[f64]) -> Result<(LiftEvidence, DMatrix<f64>, DMatrix<f64>)> {
    let chart = &sys.chart;
    let base = chart.base_indices();
    let vel = chart.velocity_indices();
    let k = kernel_at(sys, p)?;
    let kb = select_rows(&k, &base);
    let kv = select_rows(&k, &vel);
    let n_vert = linalg::null_space(&kb, RANK_TOL);
    let vertical_dim = if k.ncols() == 0 { 0 } else { n_vert.ncols() };
    let pi_k = linalg::column_space(&kb, RANK_TOL);
    let u = if vertical_dim == 0 { DMatrix::zeros(base.len(), 0) } else { linalg::column_space(&(&kv * &n_vert), RANK_TOL) };
    let mut ev = LiftEvidence {
        kernel_dim: k.ncols(),
        vertical_dim,
        base_rank: pi_k.ncols(),
        projection_gap: linalg::subspace_gap(&u, &pi_k),
        lift_residual: 0.0,
        velocity_dependence: 0.0,
        involutivity: 0.0,
    };
    let r = pi_k.ncols();
    if r == 0 {
        return Ok((ev, k, pi_k));
    }

    // Complete lifts of the generators must lie in the kernel.
    let mut dirs = base.clone();
    dirs.extend(chart.time_index());
    let derivs: Vec<DMatrix<f64>> = dirs.iter().map(|&i| generator_derivative(sys, p, &pi_k, i)).collect::<Result<_>>()?;
    for a in 0..r {
        let mut lift = DVector::zeros(chart.dim());
        for (i, &bi) in base.iter().enumerate() {
            lift[bi] = pi_k[(i, a)];
            let mut dv: f64 = base.iter().enumerate().map(|(kk, _)| p[vel[kk]] * derivs[kk][(i, a)]).sum();
            if chart.has_time() {
                dv += derivs[base.len()][(i, a)];
            }
            lift[vel[i]] = dv;
        }
        ev.lift_residual = ev.lift_residual.max(linalg::distance_to_span(&k, &lift) / lift.norm());
    }

    // Base distribution at shifted velocities.
    let mut shifted = p.to_vec();
    for (j, &v) in vel.iter().enumerate() {
        shifted[v] += if j % 2 == 0 { 0.5 } else { -0.5 };
    }
    ev.velocity_dependence = linalg::subspace_gap(&pi_k, &base_distribution(sys, &shifted)?);

    // [X_α, X_β] = DX_β X_α − DX_α X_β must stay in the distribution.
    let dq = base.len();
    let jac = |a: usize| DMatrix::from_fn(dq, dq, |i, kk| derivs[kk][(i, a)]);
    let proj_perp = DMatrix::identity(dq, dq) - linalg::projector(&pi_k);
    for a in 0..r {
        for b in a + 1..r {
            let xa = pi_k.column(a).into_owned();
            let xb = pi_k.column(b).into_owned();
            let bracket = jac(b) * &xa - jac(a) * &xb;
            ev.involutivity = ev.involutivity.max((&proj_perp * bracket).norm());
        }
    }
    Ok((ev, k, pi_k))
}

/// Tests whether `ker ω_L` (jet: `ker ω_L ∩ ker dt`) is the complete lift of
/// an involutive, velocity-independent distribution on the base.
pub fn detect_complete_lift(sys: &LagrangianSystem, samples: &[Vec<f64>], tol: f64) -> Result<KernelReport> {
    let base = sys.chart.base_indices();
    let per = crate::par::try_map(samples, |_, p| evidence_at(sys, p))?;
    let dims: Vec<usize> = per.iter().map(|(e, ..)| e.kernel_dim).collect();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::RankNotConstant(dims));
    }
    let mut failures = Vec::new();
    let kernel_dim = dims.first().copied().unwrap_or(0);
    if kernel_dim % 2 != 0 {
        failures.push(format!("kernel dimension {kernel_dim} is odd"));
    }
    let r = kernel_dim / 2;
    let n = per.len();
    let dim_bad: Vec<usize> = (0..n).filter(|&i| per[i].0.vertical_dim != r || per[i].0.base_rank != r).collect();
    if let Some(&i) = dim_bad.first() {
        let e = &per[i].0;
        failures.push(format!(
            "vertical part or base projection has the wrong dimension at {} of {n} samples (sample {i}: {} and {}, expected {r})",
            dim_bad.len(),
            e.vertical_dim,
            e.base_rank
        ));
    }
    let checks: [(&str, fn(&LiftEvidence) -> f64); 4] = [
        ("vertical part differs from base projection", |e| e.projection_gap),
        ("complete lift of the base distribution leaves the kernel", |e| e.lift_residual),
        ("base distribution depends on velocities", |e| e.velocity_dependence),
        ("base distribution is not involutive", |e| e.involutivity),
    ];
    for (name, get) in checks {
        let bad: Vec<usize> = (0..n).filter(|&i| !(get(&per[i].0) <= tol)).collect();
        if let Some(&first) = bad.first() {
            let worst = bad.iter().map(|&i| get(&per[i].0)).fold(0.0, f64::max);
            failures.push(format!("{name} at {} of {n} samples (first: sample {first}, max residual {worst:e})", bad.len()));
        }
    }
    // Samples sharing base coordinates (and time) must see the same distribution.
    let mut key_of = |p: &Vec<f64>| {
        let mut key: Vec<u64> = base.iter().map(|&b| p[b].to_bits()).collect();
        key.extend(sys.chart.time_index().map(|t| p[t].to_bits()));
        key
    };
    let keys: Vec<Vec<u64>> = samples.iter().map(&mut key_of).collect();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            if keys[i] == keys[j] {
                let gap = linalg::subspace_gap(&per[i].2, &per[j].2);
                if !(gap <= tol) {
                    failures.push(format!("samples {i} and {j} share base coordinates but differ by {gap:e}"));
                }
            }
        }
    }
    let base_distribution = per.first().map(|(.., d)| d.clone()).unwrap_or_else(|| DMatrix::zeros(base.len(), 0));
    Ok(KernelReport {
        is_complete_lift: failures.is_empty(),
        r,
        evidence: per.iter().map(|(e, ..)| e.clone()).collect(),
        failures,
        base_distribution,
        kernels: per.into_iter().map(|(_, k, _)| SubspaceBasis::orthonormal(k)).collect(),
    })
}

/// `Φ_a = Y_a^i (∂²L/∂v^i∂q^j v^j − ∂L/∂q^i)` for a basis `Y_a` of `ker W`.
pub fn primary_constraints(sys: &LagrangianSystem, point: &[f64]) -> Result<Vec<f64>> {
    if !sys.autonomous {
        return Err(Error::NotAutonomous);
    }
    let d = sys.lagrangian.second_order(point)?;
    let base = sys.chart.base_indices();
    let vel = sys.chart.velocity_indices();
    let w = DMatrix::from_fn(vel.len(), vel.len(), |i, j| d.hessian[(vel[i], vel[j])]);
    let y = linalg::null_space(&w, RANK_TOL);
    let el = DVector::from_fn(base.len(), |i, _| {
        base.iter().zip(&vel).map(|(&q, &v)| d.hessian[(vel[i], q)] * point[v]).sum::<f64>() - d.gradient[base[i]]
    });
    Ok((y.transpose() * el).as_slice().to_vec())
}

pub type FormField = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync>;
pub type CovectorField = Arc<dyn Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync>;
type VectorField = Arc<dyn Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync>;

/// Step for finite-difference Jacobians of generated constraints.
pub const JACOBIAN_STEP: f64 = 1e-5;
/// Relative rank threshold for Jacobians that contain finite differences.
pub const JACOBIAN_RANK_TOL: f64 = 1e-6;

/// A constraint produced by one PCA step: the smooth field `Π_⊥ dH`
/// (projection of dH onto the ω-orthogonal of the previous tangent space),
/// plus the tabulated values `dH(Y_α)` on an orthonormal basis at each
/// on-surface sample.
#[derive(Clone)]
pub struct GeneratedConstraint {
    pub generation: usize,
    field: VectorField,
    /// `(sample index, dH(Y_α) values)` at every on-surface sample.
    pub table: Vec<(usize, Vec<f64>)>,
    /// Sample indices whose values all satisfy `|v| ≤ tol`.
    pub members: BTreeSet<usize>,
}

impl std::fmt::Debug for GeneratedConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratedConstraint").field("generation", &self.generation).field("table", &self.table).finish()
    }
}

/// Declared constraint expressions plus the constraints generated so far.
#[derive(Clone, Debug, Default)]
pub struct ConstraintSet {
    pub declared: Vec<Expression>,
    pub generated: Vec<GeneratedConstraint>,
}

impl ConstraintSet {
    pub fn new(declared: Vec<Expression>) -> Self {
        ConstraintSet { declared, generated: Vec::new() }
    }

    pub fn generation(&self) -> usize {
        self.generated.len()
    }

    /// Stacked constraint Jacobian at `p`.
    pub fn jacobian(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let n = p.len();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for e in &self.declared {
            rows.push(DVector::from_vec(e.eval_with_gradient(p)?.1));
        }
        for g in &self.generated {
            let mut cols = Vec::with_capacity(n);
            for k in 0..n {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[k] += JACOBIAN_STEP;
                b[k] -= JACOBIAN_STEP;
                cols.push(((g.field)(&a)? - (g.field)(&b)?) / (2.0 * JACOBIAN_STEP));
            }
            let m = DMatrix::from_columns(&cols);
            rows.extend(m.row_iter().map(|r| r.transpose()));
        }
        if rows.is_empty() {
            return Ok(DMatrix::zeros(0, n));
        }
        Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    /// Per-sample membership: declared constraints evaluated, generated
    /// constraints looked up in their tables.
    pub fn contains(&self, index: usize, p: &[f64], tol: f64) -> Result<bool> {
        for e in &self.declared {
            if e.eval(p)?.abs() > tol {
                return Ok(false);
            }
        }
        Ok(self.generated.iter().all(|g| g.members.contains(&index)))
    }
}

/// Outcome of one [`pca_step`].
#[derive(Debug, Clone)]
pub struct PcaStep {
    pub constraints: ConstraintSet,
    /// Samples on `M_{k−1}`.
    pub on_surface: Vec<usize>,
    /// Samples on `M_k`.
    pub survivors: Vec<usize>,
    /// Rank of the constraint Jacobian on `M_{k−1}` (constant by contract).
    pub jacobian_rank: usize,
    /// Dimension of the ω-orthogonal of `T M_{k−1}` at each on-surface sample.
    pub orthogonal_dims: Vec<usize>,
}

fn tangent_space(constraints: &ConstraintSet, p: &[f64]) -> Result<(DMatrix<f64>, usize)> {
    let jac = constraints.jacobian(p)?;
    let rank = if jac.nrows() == 0 { 0 } else { linalg::rank(&jac, JACOBIAN_RANK_TOL) };
    let t = if jac.nrows() == 0 { DMatrix::identity(p.len(), p.len()) } else { linalg::null_space(&jac, JACOBIAN_RANK_TOL) };
    Ok((t, rank))
}

/// Orthonormal basis of `{Y : ω(Y, Z) = 0 for all Z in T}`.
fn omega_orthogonal(omega: &DMatrix<f64>, t: &DMatrix<f64>) -> DMatrix<f64> {
    if t.ncols() == 0 {
        return DMatrix::identity(omega.nrows(), omega.nrows());
    }
    linalg::null_space(&(omega * t).transpose(), RANK_TOL)
}

/// One step of the constraint algorithm on a fixed sample list.
pub fn pca_step(omega_field: &FormField, dh_field: &CovectorField, constraints: &ConstraintSet, samples: &[Vec<f64>], tol: f64) -> Result<PcaStep> {
    let mut on_surface = Vec::new();
    for (i, p) in samples.iter().enumerate() {
        if constraints.contains(i, p, tol)? {
            on_surface.push(i);
        }
    }
    if on_surface.is_empty() {
        return Err(Error::EmptySurface);
    }
    let per = crate::par::try_map(&on_surface, |_, &i| {
        let p = &samples[i];
        let (t, rank) = tangent_space(constraints, p)?;
        let perp = omega_orthogonal(&omega_field(p)?, &t);
        let values = (perp.transpose() * dh_field(p)?).as_slice().to_vec();
        Ok::<_, Error>((rank, perp.ncols(), values))
    })?;
    let ranks: Vec<usize> = per.iter().map(|(r, ..)| *r).collect();
    if ranks.iter().any(|&r| r != ranks[0]) {
        return Err(Error::RankNotConstant(ranks));
    }
    let table: Vec<(usize, Vec<f64>)> = on_surface.iter().zip(&per).map(|(&i, (_, _, v))| (i, v.clone())).collect();
    let members: BTreeSet<usize> = table.iter().filter(|(_, v)| v.iter().all(|x| x.abs() <= tol)).map(|(i, _)| *i).collect();
    let previous = constraints.clone();
    let (omega, dh) = (omega_field.clone(), dh_field.clone());
    let field: VectorField = Arc::new(move |p: &[f64]| {
        let (t, _) = tangent_space(&previous, p)?;
        let perp = omega_orthogonal(&omega(p)?, &t);
        Ok(linalg::projector(&perp) * dh(p)?)
    });
    let mut next = constraints.clone();
    next.generated.push(GeneratedConstraint { generation: constraints.generation() + 1, field, table, members: members.clone() });
    Ok(PcaStep {
        constraints: next,
        on_surface,
        survivors: members.into_iter().collect(),
        jacobian_rank: ranks[0],
        orthogonal_dims: per.iter().map(|(_, d, _)| *d).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaRun {
    /// Survivor sample indices after each iteration (`history[0]` is `M_0`).
    pub history: Vec<Vec<usize>>,
    pub stabilized: bool,
    /// Iteration at which the survivor set stopped changing.
    pub stabilized_at: Option<usize>,
    /// Empty final survivor set: dynamics not well defined anywhere sampled.
    pub inconsistent: bool,
    pub jacobian_ranks: Vec<usize>,
}

/// Iterates [`pca_step`] from `M_0` = all samples.
pub fn run_pca(omega_field: &FormField, dh_field: &CovectorField, samples: &[Vec<f64>], max_iter: usize, tol: f64) -> Result<PcaRun> {
    if max_iter == 0 {
        return Err(Error::PreconditionViolated { hypothesis: "max_iter >= 1".into(), residual: 0.0 });
    }
    let mut constraints = ConstraintSet::default();
    let mut history = vec![(0..samples.len()).collect::<Vec<_>>()];
    let mut ranks = Vec::new();
    let mut stabilized_at = None;
    for it in 1..=max_iter {
        if history.last().unwrap().is_empty() {
            break;
        }
        let step = pca_step(omega_field, dh_field, &constraints, samples, tol)?;
        ranks.push(step.jacobian_rank);
        let same = step.survivors == *history.last().unwrap();
        history.push(step.survivors);
        constraints = step.constraints;
        if same {
            stabilized_at = Some(it);
            break;
        }
    }
    let inconsistent = history.last().unwrap().is_empty();
    Ok(PcaRun { history, stabilized: stabilized_at.is_some(), stabilized_at, inconsistent, jacobian_ranks: ranks })
}

/// `ω_L` and `dE_L` of an autonomous system as PCA fields.
pub fn lagrangian_fields(sys: &LagrangianSystem) -> (FormField, CovectorField) {
    let (a, b) = (sys.clone(), sys.clone());
    (Arc::new(move |p: &[f64]| forms::omega_matrix(&a, p)), Arc::new(move |p: &[f64]| forms::energy_differential(&b, p)))
}

#[derive(Debug, Clone, Serialize)]
pub struct SodeProjection {
    pub point: Vec<f64>,
    /// `sode_residual` of the candidate `a ∂_q + · ∂_v` at the projected point.
    pub defect: f64,
}

/// Limit `(q₀, a)` of the defect flow `(q₀, a + e^{−t}(q̇₀ − a))`, where `a`
/// are the base components of `y`.
pub fn sode_projection(chart: &ChartSpec, point: &[f64], y: &DVector<f64>) -> Result<SodeProjection> {
    if point.len() != chart.dim() || y.len() != chart.dim() {
        return Err(Error::DimensionMismatch { expected: chart.dim(), found: point.len().min(y.len()) });
    }
    let base = chart.base_indices();
    let vel = chart.velocity_indices();
    let mut out = point.to_vec();
    for (&q, &v) in base.iter().zip(&vel) {
        out[v] = y[q];
    }
    let mut candidate = y.clone();
    if let Some(t) = chart.time_index() {
        candidate[t] = 1.0;
    }
    let defect = forms::sode_residual(&candidate, chart, &out);
    debug_assert!(defect <= 1e-12);
    Ok(SodeProjection { point: out, defect })
}

/// `L = ½ g_ij q̇^i q̇^j + A_i q̇^i − V` data over base coordinates (and time).
#[derive(Debug, Clone)]
pub struct MetricData {
    pub g: Vec<Vec<Expression>>,
    pub a: Vec<Expression>,
    pub v: Expression,
}

impl MetricData {
    pub fn parse(chart: &Arc<ChartSpec>, g: &[Vec<String>], a: &[String], v: &str) -> Result<Self> {
        let d = chart.config_dim();
        if g.len() != d || g.iter().any(|row| row.len() != d) {
            return Err(Error::shape("metric g", format!("{d}x{d}"), format!("{}x{}", g.len(), g.first().map_or(0, |r| r.len()))));
        }
        if a.len() != d {
            return Err(Error::shape("potential A", d, a.len()));
        }
        let p = |s: &str| Expression::parse(s, chart);
        let data = MetricData {
            g: g.iter().map(|row| row.iter().map(|s| p(s)).collect::<Result<_>>()).collect::<Result<_>>()?,
            a: a.iter().map(|s| p(s)).collect::<Result<_>>()?,
            v: p(v)?,
        };
        data.check_base_only(chart)?;
        Ok(data)
    }

    fn check_base_only(&self, chart: &ChartSpec) -> Result<()> {
        let all = self.g.iter().flatten().chain(&self.a).chain(std::iter::once(&self.v));
        for e in all {
            if let Some(k) = e.referenced().into_iter().find(|&k| chart.role(k).is_velocity()) {
                return Err(Error::config("metric", format!("`{}` may not appear in metric data", chart.names()[k])));
            }
        }
        Ok(())
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        self.v.chart()
    }

    /// The Lagrangian assembled in the expression language.
    pub fn lagrangian(&self) -> Expression {
        let chart = self.chart().clone();
        let vel = chart.velocity_indices();
        let half = Expression::constant(0.5, &chart);
        let mut l = Expression::constant(0.0, &chart);
        for (i, row) in self.g.iter().enumerate() {
            for (j, gij) in row.iter().enumerate() {
                if gij.is_zero() {
                    continue;
                }
                let term = half.mul(gij).mul(&Expression::var(vel[i], &chart)).mul(&Expression::var(vel[j], &chart));
                l = l.add(&term);
            }
        }
        for (i, ai) in self.a.iter().enumerate() {
            l = l.add(&ai.mul(&Expression::var(vel[i], &chart)));
        }
        l.sub(&self.v)
    }

    /// `g` evaluated at `p`.
    pub fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.g.len();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.g[i][j].eval(p)?;
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencySample {
    pub condition_1: f64,
    pub condition_2: f64,
    pub condition_3: f64,
    /// `‖g W‖` for the kernel vectors used.
    pub kernel_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub samples: Vec<ConsistencySample>,
    pub max: [f64; 3],
}

impl ConsistencyReport {
    /// First condition (1-based) whose residual exceeds `tol`.
    pub fn failing_condition(&self, tol: f64) -> Option<usize> {
        self.max.iter().position(|&m| !(m <= tol)).map(|i| i + 1)
    }

    pub fn consistent(&self, tol: f64) -> bool {
        self.failing_condition(tol).is_none()
    }
}

/// Kernel-membership tolerance for the metric kernel field.
pub const METRIC_KERNEL_TOL: f64 = 1e-9;

/// Residuals of the three metric consistency conditions for `W` in `ker g`.
/// Without an explicit `kernel` field the orthonormal null space of `g` is
/// used at each sample.
pub fn degenerate_metric_consistency(metric: &MetricData, kernel: Option<&[Expression]>, samples: &[Vec<f64>]) -> Result<ConsistencyReport> {
    let chart = metric.chart().clone();
    let base = chart.base_indices();
    let d = base.len();
    let mut cols = base.clone();
    cols.extend(chart.time_index());
    let has_t = chart.has_time();
    if let Some(k) = kernel {
        if k.len() != d {
            return Err(Error::shape("kernel field", d, k.len()));
        }
    }
    let per = crate::par::try_map(samples, |_, p| {
        let g = metric.metric_at(p)?;
        let ws: Vec<DVector<f64>> = match kernel {
            Some(k) => vec![DVector::from_vec(k.iter().map(|e| e.eval(p)).collect::<Result<Vec<_>>>()?)],
            None => linalg::null_space(&g, RANK_TOL).column_iter().map(|c| c.into_owned()).collect(),
        };
        let mut kernel_residual: f64 = 0.0;
        for w in &ws {
            kernel_residual = kernel_residual.max((&g * w).norm());
        }
        if kernel_residual > METRIC_KERNEL_TOL {
            return Err(Error::NotInKernel(kernel_residual));
        }
        // dg[i][j] = gradient of g_ij over (base, t).
        let dg: Vec<Vec<Vec<f64>>> = metric
            .g
            .iter()
            .map(|row| row.iter().map(|e| e.eval_gradient_on(p, &cols).map(|r| r.1)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?;
        let da: Vec<Vec<f64>> = metric.a.iter().map(|e| e.eval_gradient_on(p, &cols).map(|r| r.1)).collect::<Result<_>>()?;
        let dv = metric.v.eval_gradient_on(p, &cols)?.1;
        let dt = |grad: &[f64]| if has_t { grad[d] } else { 0.0 };
        let (mut c1, mut c2, mut c3) = (0.0f64, 0.0f64, 0.0f64);
        for w in &ws {
            for j in 0..d {
                for k in 0..d {
                    let s: f64 = (0..d).map(|i| w[i] * (dg[i][j][k] + dg[k][j][i] - dg[k][i][j])).sum();
                    c1 = c1.max(s.abs());
                }
                let s: f64 = (0..d).map(|i| w[i] * (da[i][j] - da[j][i] + dt(&dg[i][j]))).sum();
                c2 = c2.max(s.abs());
            }
            let s: f64 = (0..d).map(|i| w[i] * (dv[i] + dt(&da[i]))).sum();
            c3 = c3.max(s.abs());
        }
        Ok(ConsistencySample { condition_1: c1, condition_2: c2, condition_3: c3, kernel_residual })
    })?;
    let mut max = [0.0f64; 3];
    for s in &per {
        max[0] = max[0].max(s.condition_1);
        max[1] = max[1].max(s.condition_2);
        max[2] = max[2].max(s.condition_3);
    }
    Ok(ConsistencyReport { samples: per, max })
}
