//! The thickened chart, the foliated Tulczyjew map, the correction
//! `F^{P,∇}` and the regularized Lagrangian `L̃ = L + F^{P,∇}`, with the
//! restriction, regularity and coisotropy checks on the zero section.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::chart::ChartSpec;
use crate::constraints::KernelReport;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::forms::{self, LagrangianSystem};
use crate::linalg::{self, RANK_TOL};

/// Layout of the coordinate arrays handled by the Tulczyjew maps:
/// `l` leaf and `r` fiber coordinates, optionally followed by `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TulczyjewLayout {
    pub leaf: usize,
    pub fiber: usize,
    pub time: bool,
}

impl TulczyjewLayout {
    pub fn len(&self) -> usize {
        2 * self.leaf + 4 * self.fiber + usize::from(self.time)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), found: p.len() });
        }
        Ok(())
    }

    /// Source blocks in `(x, f, μ, ẋ, ḟ, μ̇)` order, as (offset, length).
    fn blocks(&self) -> [(usize, usize); 6] {
        let (l, r) = (self.leaf, self.fiber);
        [(0, l), (l, r), (l + r, r), (l + 2 * r, l), (2 * l + 2 * r, r), (2 * l + 3 * r, r)]
    }

    fn permute(&self, p: &[f64], order: [usize; 6]) -> Vec<f64> {
        let blocks = self.blocks();
        let mut out = Vec::with_capacity(p.len());
        for k in order {
            let (o, n) = blocks[k];
            out.extend_from_slice(&p[o..o + n]);
        }
        if self.time {
            out.push(p[p.len() - 1]);
        }
        out
    }

    fn inverse_permute(&self, p: &[f64], order: [usize; 6]) -> Vec<f64> {
        let blocks = self.blocks();
        let mut out = vec![0.0; p.len()];
        let mut at = 0;
        for k in order {
            let (o, n) = blocks[k];
            out[o..o + n].copy_from_slice(&p[at..at + n]);
            at += n;
        }
        if self.time {
            out[p.len() - 1] = p[p.len() - 1];
        }
        out
    }
}

// (x, f, μ, ẋ, ḟ, μ̇) ↦ (x, ẋ, f, ḟ, μ_f = μ̇, μ_ḟ = μ)
const ALPHA_ORDER: [usize; 6] = [0, 3, 1, 4, 5, 2];

/// `α : (x, f, μ, ẋ, ḟ, μ̇) ↦ (x, ẋ, f, ḟ, μ_f, μ_ḟ)` with `μ_f = μ̇`, `μ_ḟ = μ`.
pub fn tulczyjew_alpha(layout: TulczyjewLayout, p: &[f64]) -> Result<Vec<f64>> {
    layout.check(p)?;
    Ok(layout.permute(p, ALPHA_ORDER))
}

pub fn tulczyjew_alpha_inverse(layout: TulczyjewLayout, p: &[f64]) -> Result<Vec<f64>> {
    layout.check(p)?;
    Ok(layout.inverse_permute(p, ALPHA_ORDER))
}

/// `δ_F : (x, ẋ, f, ḟ, v_f, v_ḟ) ↦ (x, f, w, ẋ, v, ẇ)` with `w = v_f`,
/// `v = ḟ`, `ẇ = v_ḟ`; the image is read as a tangent vector to the
/// distribution with fiber component `w` and fiber velocity `ẇ`.
pub fn delta_foliated(layout: TulczyjewLayout, xi: &[f64]) -> Result<Vec<f64>> {
    layout.check(xi)?;
    let (l, r) = (layout.leaf, layout.fiber);
    let x = &xi[..l];
    let xd = &xi[l..2 * l];
    let f = &xi[2 * l..2 * l + r];
    let fd = &xi[2 * l + r..2 * l + 2 * r];
    let vf = &xi[2 * l + 2 * r..2 * l + 3 * r];
    let vfd = &xi[2 * l + 3 * r..2 * l + 4 * r];
    let mut out = [x, f, vf, xd, fd, vfd].concat();
    if layout.time {
        out.push(xi[xi.len() - 1]);
    }
    Ok(out)
}

/// `⟨ρ, ξ⟩ = μ_f·v_f + μ_ḟ·v_ḟ` on the cotangent side of the complete lift.
pub fn pairing_cotangent(layout: TulczyjewLayout, rho: &[f64], xi: &[f64]) -> Result<f64> {
    layout.check(rho)?;
    layout.check(xi)?;
    let o = 2 * layout.leaf + 2 * layout.fiber;
    Ok((0..2 * layout.fiber).map(|k| rho[o + k] * xi[o + k]).sum())
}

/// `⟨η, ψ⟩′ = μ̇·w + μ·ẇ`, the tangent lift of the canonical pairing.
pub fn pairing_tangent_lift(layout: TulczyjewLayout, eta: &[f64], psi: &[f64]) -> Result<f64> {
    layout.check(eta)?;
    layout.check(psi)?;
    let b = layout.blocks();
    let pair = |a: (usize, usize), c: (usize, usize)| (0..a.1).map(|k| eta[a.0 + k] * psi[c.0 + k]).sum::<f64>();
    // η: μ at block 2, μ̇ at block 5. ψ: w at block 2, ẇ at block 5.
    Ok(pair(b[5], b[2]) + pair(b[2], b[5]))
}

/// The original chart and its thickening by `(μ_A, μ̇_A)`.
#[derive(Debug, Clone)]
pub struct ThickenedChart {
    pub original: Arc<ChartSpec>,
    pub chart: Arc<ChartSpec>,
}

impl ThickenedChart {
    pub fn new(original: &Arc<ChartSpec>) -> Result<Self> {
        Ok(ThickenedChart { original: original.clone(), chart: Arc::new(original.thicken()?) })
    }

    pub fn fiber_count(&self) -> usize {
        self.original.fiber_count()
    }

    /// Embeds an original point at `μ = μ̇ = 0`.
    pub fn embed(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.original.dim() {
            return Err(Error::DimensionMismatch { expected: self.original.dim(), found: p.len() });
        }
        let mut out = p.to_vec();
        out.resize(self.chart.dim(), 0.0);
        Ok(out)
    }

    pub fn project<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[..self.original.dim()]
    }

    /// `sqrt(Σ μ_A² + μ̇_A²)`.
    pub fn thickening_norm(&self, p: &[f64]) -> f64 {
        p[self.original.dim()..].iter().fold(0.0, |acc, x| acc + x * x).sqrt()
    }
}

fn shape_check<T>(what: &str, table: &[T], expected: usize) -> Result<()> {
    if table.len() != expected {
        return Err(Error::shape(what, expected, table.len()));
    }
    Ok(())
}

fn parse_table(chart: &Arc<ChartSpec>, rows: &[Vec<String>]) -> Result<Vec<Vec<Expression>>> {
    rows.iter().map(|row| row.iter().map(|s| Expression::parse(s, chart)).collect()).collect()
}

fn base_only(chart: &ChartSpec, e: &Expression, what: &str) -> Result<()> {
    if let Some(k) = e.referenced().into_iter().find(|&k| !chart.role(k).is_base() && Some(k) != chart.time_index()) {
        return Err(Error::config(what, format!("`{}` is not a base coordinate", chart.names()[k])));
    }
    Ok(())
}

/// `P^A = df^A − Q^A dt − P^A_a dx^a`, coefficients over base coordinates.
#[derive(Debug, Clone)]
pub struct AlmostProductSpec {
    /// `p[A][a] = P^A_a`, shape `r × l`.
    pub p: Vec<Vec<Expression>>,
    /// `Q^A` (jet charts only).
    pub q: Option<Vec<Expression>>,
}

impl AlmostProductSpec {
    pub fn zero(chart: &Arc<ChartSpec>) -> Self {
        let z = || Expression::constant(0.0, chart);
        AlmostProductSpec {
            p: (0..chart.fiber_count()).map(|_| (0..chart.leaf_count()).map(|_| z()).collect()).collect(),
            q: chart.has_time().then(|| (0..chart.fiber_count()).map(|_| z()).collect()),
        }
    }

    pub fn parse(chart: &Arc<ChartSpec>, p: &[Vec<String>], q: Option<&[String]>) -> Result<Self> {
        let q = match q {
            Some(q) => Some(q.iter().map(|s| Expression::parse(s, chart)).collect::<Result<Vec<_>>>()?),
            None => None,
        };
        Ok(AlmostProductSpec { p: parse_table(chart, p)?, q })
    }

    fn validate(&self, chart: &ChartSpec) -> Result<()> {
        let (l, r) = (chart.leaf_count(), chart.fiber_count());
        shape_check("P^A_a rows", &self.p, r)?;
        for row in &self.p {
            shape_check("P^A_a columns", row, l)?;
        }
        match (&self.q, chart.has_time()) {
            (Some(q), true) => shape_check("Q^A", q, r)?,
            (Some(q), false) => return Err(Error::shape("Q^A on an autonomous chart", 0, q.len())),
            (None, _) => {}
        }
        for e in self.p.iter().flatten().chain(self.q.iter().flatten()) {
            base_only(chart, e, "almost product")?;
        }
        Ok(())
    }

    /// `P^i_j` as a matrix over base coordinates (and `t`), at `p`.
    fn projector_components(&self, chart: &ChartSpec, point: &[f64]) -> Result<DMatrix<f64>> {
        let (l, r) = (chart.leaf_count(), chart.fiber_count());
        let n = l + r + usize::from(chart.has_time());
        let mut m = DMatrix::zeros(n, n);
        for a in 0..r {
            m[(l + a, l + a)] = 1.0;
            for b in 0..l {
                m[(l + a, b)] = -self.p[a][b].eval(point)?;
            }
            if let Some(q) = &self.q {
                m[(l + a, l + r)] = -q[a].eval(point)?;
            }
        }
        Ok(m)
    }
}

/// Linear Ehresmann connection on the thickening, `Γ_·A = γ^B_·A μ_B`, so
/// every Γ vanishes on the zero section.
#[derive(Debug, Clone)]
pub enum ConnectionSpec {
    Zero,
    Linear {
        /// `leaf[a][A][B] = γ^B_{aA}`.
        leaf: Vec<Vec<Vec<Expression>>>,
        /// `fiber[C][A][B] = γ^B_{CA}`.
        fiber: Vec<Vec<Vec<Expression>>>,
        /// `time[A][B] = γ^B_A` (jet charts only).
        time: Option<Vec<Vec<Expression>>>,
    },
}

impl ConnectionSpec {
    fn validate(&self, chart: &ChartSpec) -> Result<()> {
        let (l, r) = (chart.leaf_count(), chart.fiber_count());
        let ConnectionSpec::Linear { leaf, fiber, time } = self else {
            return Ok(());
        };
        let cube = |what: &str, t: &Vec<Vec<Vec<Expression>>>, outer: usize| -> Result<()> {
            shape_check(what, t, outer)?;
            for m in t {
                shape_check(what, m, r)?;
                for row in m {
                    shape_check(what, row, r)?;
                }
            }
            Ok(())
        };
        cube("γ leaf table", leaf, l)?;
        cube("γ fiber table", fiber, r)?;
        match (time, chart.has_time()) {
            (Some(t), true) => {
                shape_check("γ time table", t, r)?;
                for row in t {
                    shape_check("γ time table", row, r)?;
                }
            }
            (Some(t), false) => return Err(Error::shape("γ time table on an autonomous chart", 0, t.len())),
            (None, _) => {}
        }
        for e in leaf.iter().flatten().flatten().chain(fiber.iter().flatten().flatten()).chain(time.iter().flatten().flatten()) {
            base_only(chart, e, "connection")?;
        }
        Ok(())
    }

    /// `Σ_B γ^B_A μ_B` for a row of coefficients.
    fn contract(row: &[Expression], mu: &[Expression]) -> Expression {
        row.iter().zip(mu).fold(Expression::constant(0.0, mu[0].chart()), |acc, (g, m)| acc.add(&g.mul(m)))
    }
}

fn rebind_all<'a>(it: impl IntoIterator<Item = &'a Expression>, chart: &Arc<ChartSpec>) -> Result<Vec<Expression>> {
    it.into_iter().map(|e| e.rebind(chart)).collect()
}

/// `F = Σ_A (μ̇_A − Γ_A − ẋ^a Γ_aA − ḟ^B Γ_BA)(ḟ^A − Q^A − ẋ^a P^A_a)`.
pub fn build_f(spec_p: &AlmostProductSpec, spec_nabla: &ConnectionSpec, thick: &ThickenedChart) -> Result<Expression> {
    spec_p.validate(&thick.original)?;
    spec_nabla.validate(&thick.original)?;
    let chart = &thick.chart;
    let (l, r) = (thick.original.leaf_count(), thick.fiber_count());
    let var = |i: usize| Expression::var(i, chart);
    let vel = chart.velocity_indices();
    let xdot: Vec<Expression> = (0..l).map(|a| var(vel[a])).collect();
    let fdot: Vec<Expression> = (0..r).map(|a| var(vel[l + a])).collect();
    let (mu_idx, mudot_idx) = chart.thickening_indices();
    let mu: Vec<Expression> = mu_idx.iter().map(|&i| var(i)).collect();
    let mut f = Expression::constant(0.0, chart);
    for a in 0..r {
        let mut first = var(mudot_idx[a]);
        if let ConnectionSpec::Linear { leaf, fiber, time } = spec_nabla {
            if let Some(time) = time {
                first = first.sub(&ConnectionSpec::contract(&rebind_all(&time[a], chart)?, &mu));
            }
            for (b, xd) in xdot.iter().enumerate() {
                first = first.sub(&xd.mul(&ConnectionSpec::contract(&rebind_all(&leaf[b][a], chart)?, &mu)));
            }
            for (c, fd) in fdot.iter().enumerate() {
                first = first.sub(&fd.mul(&ConnectionSpec::contract(&rebind_all(&fiber[c][a], chart)?, &mu)));
            }
        }
        let mut second = fdot[a].clone();
        if let Some(q) = &spec_p.q {
            second = second.sub(&q[a].rebind(chart)?);
        }
        for (b, xd) in xdot.iter().enumerate() {
            second = second.sub(&xd.mul(&spec_p.p[a][b].rebind(chart)?));
        }
        f = f.add(&first.mul(&second));
    }
    Ok(f)
}

/// `L̃ = L + F` together with its ingredients.
#[derive(Debug, Clone)]
pub struct RegularizedSystem {
    pub original: LagrangianSystem,
    pub thickened: ThickenedChart,
    pub correction: Expression,
    pub system: LagrangianSystem,
}

/// How the fiber split of the chart is justified.
#[derive(Debug, Clone, Copy)]
pub enum Hypothesis<'a> {
    /// Complete-lift evidence; the detected base distribution must be
    /// spanned by the chart's fiber coordinates.
    Detected(&'a KernelReport),
    /// Caller-declared split, taken on trust.
    Declared,
}

/// Largest admissible gap between the detected distribution and `span{∂_f}`.
pub const SPLIT_TOL: f64 = 1e-6;

pub fn build_regularized_lagrangian(sys: &LagrangianSystem, spec_p: &AlmostProductSpec, spec_nabla: &ConnectionSpec, hypothesis: Hypothesis<'_>) -> Result<RegularizedSystem> {
    let chart = &sys.chart;
    if chart.is_thickened() {
        return Err(Error::ChartMismatch("system is already thickened".into()));
    }
    if let Hypothesis::Detected(report) = hypothesis {
        if !report.is_complete_lift {
            return Err(Error::HypothesisViolated(format!("characteristic distribution is not a complete lift: {}", report.failures.join("; "))));
        }
        if report.r != chart.fiber_count() {
            return Err(Error::HypothesisViolated(format!("detected {} fiber directions, chart declares {}", report.r, chart.fiber_count())));
        }
        let d = chart.base_indices().len();
        let declared = DMatrix::from_fn(d, chart.fiber_count(), |i, a| if i == chart.leaf_count() + a { 1.0 } else { 0.0 });
        let gap = linalg::subspace_gap(&report.base_distribution, &declared);
        if gap > SPLIT_TOL {
            return Err(Error::HypothesisViolated(format!("detected distribution differs from the declared fiber coordinates by {gap:e}")));
        }
    }
    let thickened = ThickenedChart::new(chart)?;
    let correction = build_f(spec_p, spec_nabla, &thickened)?;
    let lagrangian = sys.lagrangian.rebind(&thickened.chart)?.add(&correction);
    Ok(RegularizedSystem { original: sys.clone(), thickened, correction, system: LagrangianSystem::new(lagrangian) })
}

#[derive(Debug, Clone, Serialize)]
pub struct RestrictionReport {
    /// `|L̃ − L|` per sample.
    pub value_deviation: Vec<f64>,
    /// `max_i |θ_L̃,i − θ_L,i|` over original coordinates, per sample.
    pub theta_deviation: Vec<f64>,
}

impl RestrictionReport {
    pub fn max_value_deviation(&self) -> f64 {
        self.value_deviation.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_theta_deviation(&self) -> f64 {
        self.theta_deviation.iter().copied().fold(0.0, f64::max)
    }
}

pub const RESTRICTION_VALUE_TOL: f64 = 1e-12;
pub const RESTRICTION_THETA_TOL: f64 = 1e-9;

/// Deviations of `L̃` and `θ_L̃` from `L` and `θ_L` at arbitrary thickened points.
pub fn restriction_report(reg: &RegularizedSystem, samples: &[Vec<f64>]) -> Result<RestrictionReport> {
    let n0 = reg.thickened.original.dim();
    let per = crate::par::try_map(samples, |_, p| {
        let base = reg.thickened.project(p);
        let value = (reg.system.lagrangian.eval(p)? - reg.original.lagrangian.eval(base)?).abs();
        let th = forms::poincare_cartan(&reg.system, p)?.column();
        let th0 = forms::poincare_cartan(&reg.original, base)?.column();
        let theta = (0..n0).map(|i| (th[i] - th0[i]).abs()).fold(0.0, f64::max);
        Ok::<_, Error>((value, theta))
    })?;
    Ok(RestrictionReport { value_deviation: per.iter().map(|x| x.0).collect(), theta_deviation: per.iter().map(|x| x.1).collect() })
}

fn require_zero_section(reg: &RegularizedSystem, samples: &[Vec<f64>]) -> Result<()> {
    let n = reg.thickened.chart.dim();
    for p in samples {
        if p.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p.len() });
        }
        let off = reg.thickened.thickening_norm(p);
        if off != 0.0 {
            return Err(Error::PreconditionViolated { hypothesis: "sample on the zero section".into(), residual: off });
        }
    }
    Ok(())
}

/// Restriction property on the zero section.
pub fn restriction_check(reg: &RegularizedSystem, samples: &[Vec<f64>]) -> Result<RestrictionReport> {
    require_zero_section(reg, samples)?;
    let rep = restriction_report(reg, samples)?;
    let (v, t) = (rep.max_value_deviation(), rep.max_theta_deviation());
    if v > RESTRICTION_VALUE_TOL {
        return Err(Error::ToleranceExceeded { check: "restriction of L̃".into(), residual: v, tol: RESTRICTION_VALUE_TOL });
    }
    if t > RESTRICTION_THETA_TOL {
        return Err(Error::ToleranceExceeded { check: "restriction of θ_L̃".into(), residual: t, tol: RESTRICTION_THETA_TOL });
    }
    Ok(rep)
}

/// Smallest relative singular value certifying (co)symplectic
/// nondegeneracy at one point, or `None` when degenerate.
fn nondegeneracy(sys: &LagrangianSystem, p: &[f64], tol: f64) -> Result<(bool, f64)> {
    let omega = forms::omega_matrix(sys, p)?;
    let n = omega.ncols();
    match forms::dt_covector(&sys.chart) {
        None => {
            let sv = linalg::singular_values(&omega);
            let smin = sv.last().copied().unwrap_or(0.0);
            let rel = if sv[0] > 0.0 { smin / sv[0] } else { 0.0 };
            Ok((rel > tol, smin))
        }
        Some(dt) => {
            let mut m = omega.clone().resize_vertically(n + 1, 0.0);
            m.row_mut(n).copy_from(&dt.transpose());
            let sv = linalg::singular_values(&m);
            let smin = sv.last().copied().unwrap_or(0.0);
            let rel = if sv[0] > 0.0 { smin / sv[0] } else { 0.0 };
            let reeb = forms::reeb_evolution_field(&omega, &dt)?;
            let ok = rel > tol && linalg::rank(&omega, tol) == n - 1 && reeb.solve.is_consistent() && reeb.gauge.rank == 0;
            Ok((ok, smin))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    /// Smallest singular value of `ω_L̃` (jet: of `ω_L̃` stacked with `dt`) per sample.
    pub sigma_min: Vec<f64>,
    /// Radii of the μ-shells that were probed, ascending.
    pub shells: Vec<f64>,
    /// Largest probed radius such that every shell up to it was nondegenerate.
    pub verified_shell_radius: f64,
}

/// Deterministic unit direction in the `(μ, μ̇)` block for sample `i`.
fn shell_direction(i: usize, len: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|k| (1.3 * (i + 1) as f64 + 0.7 * (k + 1) as f64).sin() + 0.1).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Nondegeneracy of `ω_L̃` on the zero section, plus a probe of the μ-shells
/// `‖(μ, μ̇)‖ = ρ` around each sample.
pub fn verify_regularity(reg: &RegularizedSystem, samples: &[Vec<f64>], tol: f64, shells: &[f64]) -> Result<RegularityReport> {
    require_zero_section(reg, samples)?;
    let per = crate::par::try_map(samples, |_, p| nondegeneracy(&reg.system, p, tol))?;
    if let Some((i, (_, s))) = per.iter().enumerate().find(|(_, (ok, _))| !ok) {
        return Err(Error::DegenerateAtSample { sample: i, sigma_min: *s });
    }
    let mut radii = shells.to_vec();
    radii.sort_by(f64::total_cmp);
    let n0 = reg.thickened.original.dim();
    let extra = reg.thickened.chart.dim() - n0;
    let mut verified = 0.0;
    if extra > 0 {
        for &rho in &radii {
            let ok = crate::par::try_map(samples, |i, p| {
                let mut q = p.clone();
                for (k, d) in shell_direction(i, extra).into_iter().enumerate() {
                    q[n0 + k] = rho * d;
                }
                Ok::<_, Error>(nondegeneracy(&reg.system, &q, tol).map(|r| r.0).unwrap_or(false))
            })?;
            if ok.iter().all(|&b| b) {
                verified = rho;
            } else {
                break;
            }
        }
    }
    Ok(RegularityReport { sigma_min: per.iter().map(|x| x.1).collect(), shells: radii, verified_shell_radius: verified })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoisotropySample {
    pub orthogonal_dim: usize,
    /// Largest component of an orthogonal basis vector outside the embedded tangent space.
    pub containment: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoisotropyReport {
    pub samples: Vec<CoisotropySample>,
}

impl CoisotropyReport {
    pub fn max_containment(&self) -> f64 {
        self.samples.iter().map(|s| s.containment).fold(0.0, f64::max)
    }
}

pub const COISOTROPY_TOL: f64 = 1e-9;

/// ω_L̃-orthogonal of the embedded original chart at zero-section samples
/// (jet: also annihilated by `dt`); it must lie inside and have dimension `2r`.
pub fn coisotropy_check(reg: &RegularizedSystem, samples: &[Vec<f64>]) -> Result<CoisotropyReport> {
    require_zero_section(reg, samples)?;
    let n0 = reg.thickened.original.dim();
    let n = reg.thickened.chart.dim();
    let expected = 2 * reg.thickened.fiber_count();
    let tangent = DMatrix::from_fn(n, n0, |i, j| if i == j { 1.0 } else { 0.0 });
    let dt = forms::dt_covector(&reg.thickened.chart);
    let per = crate::par::try_map(samples, |_, p| {
        let omega = forms::omega_matrix(&reg.system, p)?;
        let mut m = tangent.transpose() * &omega;
        if let Some(dt) = &dt {
            m = m.resize_vertically(n0 + 1, 0.0);
            m.row_mut(n0).copy_from(&dt.transpose());
        }
        let orth = linalg::null_space(&m, RANK_TOL);
        let containment = if orth.ncols() == 0 { 0.0 } else { orth.rows(n0, n - n0).abs().max() };
        Ok::<_, Error>(CoisotropySample { orthogonal_dim: orth.ncols(), containment })
    })?;
    for (i, s) in per.iter().enumerate() {
        if s.orthogonal_dim != expected || s.containment > COISOTROPY_TOL {
            return Err(Error::NotCoisotropic { sample: i, residual: s.containment, dimension: s.orthogonal_dim });
        }
    }
    Ok(CoisotropyReport { samples: per })
}

/// Coefficients of the almost-product structure on the tangent bundle used by
/// the Hamiltonian-style thickening:
/// `P^A = df^A − P^A_a dx^a − P′^A_a dẋ^a`, `R^A = dḟ^A − R^A_a dx^a − R′^A_a dẋ^a`.
#[derive(Debug, Clone)]
pub struct TangentSplitSpec {
    pub p: Vec<Vec<Expression>>,
    pub p_dot: Vec<Vec<Expression>>,
    pub r: Vec<Vec<Expression>>,
    pub r_dot: Vec<Vec<Expression>>,
}

impl TangentSplitSpec {
    pub fn zero(chart: &Arc<ChartSpec>) -> Self {
        let t = || (0..chart.fiber_count()).map(|_| (0..chart.leaf_count()).map(|_| Expression::constant(0.0, chart)).collect()).collect();
        TangentSplitSpec { p: t(), p_dot: t(), r: t(), r_dot: t() }
    }
}

/// `ω̂ = τ*ω_L + d(μ̇_A P^A + μ_A R^A)`: the Hamiltonian thickened form
/// pulled back by `α`. Closed, but never a Lagrangian 2-form.
pub fn hamiltonian_thickened_form(sys: &LagrangianSystem, split: &TangentSplitSpec, thick: &ThickenedChart, point: &[f64]) -> Result<DMatrix<f64>> {
    if !sys.autonomous {
        return Err(Error::NotAutonomous);
    }
    let chart = &thick.chart;
    let (l, r) = (thick.original.leaf_count(), thick.fiber_count());
    for t in [&split.p, &split.p_dot, &split.r, &split.r_dot] {
        shape_check("tangent split rows", t, r)?;
        for row in t.iter() {
            shape_check("tangent split columns", row, l)?;
        }
    }
    let n = chart.dim();
    let n0 = thick.original.dim();
    let vel = chart.velocity_indices();
    let (mu, mudot) = chart.thickening_indices();
    // ϑ_k components as expressions.
    let mut theta: Vec<Expression> = (0..n).map(|_| Expression::constant(0.0, chart)).collect();
    for a in 0..r {
        let m = Expression::var(mu[a], chart);
        let md = Expression::var(mudot[a], chart);
        let f = l + a;
        let fd = vel[l + a];
        theta[f] = theta[f].add(&md);
        theta[fd] = theta[fd].add(&m);
        for b in 0..l {
            theta[b] = theta[b].sub(&md.mul(&split.p[a][b].rebind(chart)?)).sub(&m.mul(&split.r[a][b].rebind(chart)?));
            theta[vel[b]] = theta[vel[b]].sub(&md.mul(&split.p_dot[a][b].rebind(chart)?)).sub(&m.mul(&split.r_dot[a][b].rebind(chart)?));
        }
    }
    let mut d = DMatrix::zeros(n, n);
    for (k, e) in theta.iter().enumerate() {
        let g = e.eval_with_gradient(point)?.1;
        for i in 0..n {
            d[(i, k)] = g[i];
        }
    }
    let omega_l = forms::omega_matrix(sys, &point[..n0])?;
    let mut out = &d - d.transpose();
    let mut block = out.view_mut((0, 0), (n0, n0));
    block += &omega_l;
    Ok(out)
}

/// Nijenhuis tensor of the almost-product `P` on the base, largest component
/// over the samples (exact derivatives of the coefficient expressions).
pub fn almost_product_nijenhuis(spec: &AlmostProductSpec, chart: &Arc<ChartSpec>, samples: &[Vec<f64>]) -> Result<f64> {
    spec.validate(chart)?;
    let (l, r) = (chart.leaf_count(), chart.fiber_count());
    let mut dirs = chart.base_indices();
    dirs.extend(chart.time_index());
    let n = dirs.len();
    let per = crate::par::try_map(samples, |_, p| {
        let pm = spec.projector_components(chart, p)?;
        // dp[k] = ∂_k P as a matrix.
        let mut dp = vec![DMatrix::zeros(n, n); n];
        for a in 0..r {
            for b in 0..l {
                let g = spec.p[a][b].eval_gradient_on(p, &dirs)?.1;
                for k in 0..n {
                    dp[k][(l + a, b)] = -g[k];
                }
            }
            if let Some(q) = &spec.q {
                let g = q[a].eval_gradient_on(p, &dirs)?.1;
                for k in 0..n {
                    dp[k][(l + a, l + r)] = -g[k];
                }
            }
        }
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += pm[(m, i)] * dp[m][(k, j)] - pm[(m, j)] * dp[m][(k, i)];
                        s -= pm[(k, m)] * (dp[i][(m, j)] - dp[j][(m, i)]);
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
        Ok::<_, Error>(worst)
    })?;
    Ok(per.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::detect_complete_lift;

    fn chart(leaf: &[&str], fiber: &[&str], time: bool) -> Arc<ChartSpec> {
        Arc::new(ChartSpec::new(leaf, fiber, time).unwrap())
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn alpha_example_and_round_trip() {
        let lay = TulczyjewLayout { leaf: 1, fiber: 1, time: false };
        let p = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(tulczyjew_alpha(lay, &p).unwrap(), vec![1.0, 4.0, 2.0, 5.0, 6.0, 3.0]);
        assert_eq!(tulczyjew_alpha(lay, &[0.0; 6]).unwrap(), vec![0.0; 6]);
        assert!(matches!(tulczyjew_alpha(lay, &[0.0; 5]), Err(Error::DimensionMismatch { .. })));
        let lay = TulczyjewLayout { leaf: 2, fiber: 3, time: true };
        let mut rng = lcg(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..lay.len()).map(|_| rng()).collect();
            assert_eq!(tulczyjew_alpha_inverse(lay, &tulczyjew_alpha(lay, &p).unwrap()).unwrap(), p);
        }
    }

    #[test]
    fn alpha_transposes_delta() {
        let lay = TulczyjewLayout { leaf: 2, fiber: 2, time: false };
        let mut rng = lcg(11);
        for _ in 0..50 {
            let eta: Vec<f64> = (0..lay.len()).map(|_| rng()).collect();
            let xi: Vec<f64> = (0..lay.len()).map(|_| rng()).collect();
            let lhs = pairing_cotangent(lay, &tulczyjew_alpha(lay, &eta).unwrap(), &xi).unwrap();
            let rhs = pairing_tangent_lift(lay, &eta, &delta_foliated(lay, &xi).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn build_f_examples() {
        let c = chart(&["x"], &["f"], false);
        let th = ThickenedChart::new(&c).unwrap();
        let f = build_f(&AlmostProductSpec::zero(&c), &ConnectionSpec::Zero, &th).unwrap();
        assert_eq!(f.to_string(), "mudot_1*fdot");
        let p = th.chart.point(&[("fdot", 2.0), ("mudot_1", 3.0)]).unwrap();
        assert_eq!(f.eval(&p).unwrap(), 6.0);
        let spec = AlmostProductSpec::parse(&c, &[vec!["0.5".into()]], None).unwrap();
        let f = build_f(&spec, &ConnectionSpec::Zero, &th).unwrap();
        let p = th.chart.point(&[("xdot", 1.0), ("fdot", 2.0), ("mudot_1", 3.0)]).unwrap();
        assert_eq!(f.eval(&p).unwrap(), 4.5);

        let cj = chart(&["q"], &["f"], true);
        let thj = ThickenedChart::new(&cj).unwrap();
        let spec = AlmostProductSpec::parse(&cj, &[vec!["0".into()]], Some(&["q".into()])).unwrap();
        let f = build_f(&spec, &ConnectionSpec::Zero, &thj).unwrap();
        let p = thj.chart.point(&[("q", 1.0), ("fdot", 1.0), ("mudot_1", 7.0)]).unwrap();
        assert_eq!(f.eval(&p).unwrap(), 0.0);
    }

    #[test]
    fn build_f_shape_errors() {
        let c = chart(&["x"], &["f"], false);
        let th = ThickenedChart::new(&c).unwrap();
        let bad = AlmostProductSpec::parse(&c, &[vec!["1".into(), "2".into()]], None).unwrap();
        assert!(matches!(build_f(&bad, &ConnectionSpec::Zero, &th), Err(Error::ShapeMismatch { .. })));
        let bad = AlmostProductSpec::parse(&c, &[vec!["xdot".into()]], None).unwrap();
        assert!(matches!(build_f(&bad, &ConnectionSpec::Zero, &th), Err(Error::Config { .. })));
        let q = AlmostProductSpec::parse(&c, &[vec!["0".into()]], Some(&["1".into()])).unwrap();
        assert!(build_f(&q, &ConnectionSpec::Zero, &th).is_err());
    }

    fn linear_connection(c: &Arc<ChartSpec>, gx: &str, gf: &str, gt: Option<&str>) -> ConnectionSpec {
        let e = |s: &str| Expression::parse(s, c).unwrap();
        ConnectionSpec::Linear { leaf: vec![vec![vec![e(gx)]]], fiber: vec![vec![vec![e(gf)]]], time: gt.map(|s| vec![vec![e(s)]]) }
    }

    #[test]
    fn linear_connection_terms() {
        let c = chart(&["x"], &["f"], false);
        let th = ThickenedChart::new(&c).unwrap();
        let spec = AlmostProductSpec::parse(&c, &[vec!["x".into()]], None).unwrap();
        let f = build_f(&spec, &linear_connection(&c, "0.3", "f", None), &th).unwrap();
        let (x, fv, xd, fd, mu, md) = (0.4, -0.7, 1.1, 0.2, 0.9, -1.3);
        let p = [x, fv, xd, fd, mu, md];
        let expected = (md - xd * 0.3 * mu - fd * fv * mu) * (fd - xd * x);
        assert!((f.eval(&p).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn f_vanishes_on_zero_section() {
        let c = chart(&["x", "y"], &["f", "g"], true);
        let th = ThickenedChart::new(&c).unwrap();
        let e = |s: &str| Expression::parse(s, &c).unwrap();
        let spec = AlmostProductSpec { p: vec![vec![e("x*f"), e("sin(t)")], vec![e("y"), e("2")]], q: Some(vec![e("t"), e("f*g")]) };
        let m = |s: &str| vec![vec![e(s), e("1")], vec![e("x"), e("0.5")]];
        let conn = ConnectionSpec::Linear { leaf: vec![m("y"), m("f")], fiber: vec![m("g"), m("t")], time: Some(vec![vec![e("1"), e("x")], vec![e("0"), e("y")]]) };
        let f = build_f(&spec, &conn, &th).unwrap();
        let mut rng = lcg(5);
        for _ in 0..200 {
            let p: Vec<f64> = (0..c.dim()).map(|_| rng()).collect();
            assert!(f.eval(&th.embed(&p).unwrap()).unwrap().abs() <= 1e-14);
        }
    }

    #[test]
    fn cyclic_particle_regularization() {
        let c = chart(&["x"], &["f"], false);
        let sys = LagrangianSystem::from_source("0.5*xdot^2", &c).unwrap();
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 * i as f64, -0.2, 0.3 * i as f64 - 0.5, 0.4]).collect();
        let rep = detect_complete_lift(&sys, &pts, 1e-6).unwrap();
        let reg = build_regularized_lagrangian(&sys, &AlmostProductSpec::zero(&c), &ConnectionSpec::Zero, Hypothesis::Detected(&rep)).unwrap();
        assert_eq!(reg.system.lagrangian.to_string(), "0.5*xdot^2 + mudot_1*fdot");
        let zs: Vec<Vec<f64>> = pts.iter().map(|p| reg.thickened.embed(p).unwrap()).collect();
        let w = forms::velocity_hessian(&reg.system, &zs[0]).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0]));
        restriction_check(&reg, &zs).unwrap();
        let regular = verify_regularity(&reg, &zs, 1e-9, &[0.5, 1.0, 10.0]).unwrap();
        assert_eq!(regular.verified_shell_radius, 10.0);
        let co = coisotropy_check(&reg, &zs).unwrap();
        assert!(co.samples.iter().all(|s| s.orthogonal_dim == 2 && s.containment < 1e-14));
        let off = th_point(&reg, &[("xdot", 1.0), ("fdot", 0.7), ("mudot_1", 1.0)]);
        let dev = restriction_report(&reg, &[off]).unwrap();
        assert!((dev.max_value_deviation() - 0.7).abs() < 1e-15);
    }

    fn th_point(reg: &RegularizedSystem, vals: &[(&str, f64)]) -> Vec<f64> {
        reg.thickened.chart.point(vals).unwrap()
    }

    #[test]
    fn hypothesis_gate() {
        let c = chart(&["x"], &["f"], false);
        let sys = LagrangianSystem::from_source("0.5*(xdot - f)^2", &c).unwrap();
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![0.1 * i as f64, 0.3, 0.2, -0.1 * i as f64]).collect();
        let rep = detect_complete_lift(&sys, &pts, 1e-6).unwrap();
        let r = build_regularized_lagrangian(&sys, &AlmostProductSpec::zero(&c), &ConnectionSpec::Zero, Hypothesis::Detected(&rep));
        assert!(matches!(r, Err(Error::HypothesisViolated(_))));
        // Wrong split: the leaf direction declared as fiber.
        let swapped = chart(&["f"], &["x"], false);
        let sys = LagrangianSystem::from_source("0.5*(xdot - f)^2", &swapped).unwrap();
        let reg = build_regularized_lagrangian(&sys, &AlmostProductSpec::zero(&swapped), &ConnectionSpec::Zero, Hypothesis::Declared).unwrap();
        let zs = vec![reg.thickened.embed(&[0.3, 0.1, 0.2, 0.5]).unwrap()];
        assert!(matches!(verify_regularity(&reg, &zs, 1e-9, &[]), Err(Error::DegenerateAtSample { .. })));
    }

    #[test]
    fn regular_lagrangian_is_unchanged() {
        let c = chart(&["q"], &[], false);
        let sys = LagrangianSystem::from_source("0.5*qdot^2 - 0.5*q^2", &c).unwrap();
        let rep = detect_complete_lift(&sys, &[vec![0.1, 0.2]], 1e-6).unwrap();
        let reg = build_regularized_lagrangian(&sys, &AlmostProductSpec::zero(&c), &ConnectionSpec::Zero, Hypothesis::Detected(&rep)).unwrap();
        assert_eq!(reg.system.lagrangian.to_string(), sys.lagrangian.to_string());
        let co = coisotropy_check(&reg, &[vec![0.1, 0.2]]).unwrap();
        assert_eq!(co.samples[0].orthogonal_dim, 0);
    }

    #[test]
    fn jet_regularization_is_cosymplectic() {
        let c = chart(&["x"], &["f"], true);
        let sys = LagrangianSystem::from_source("0.5*xdot^2 - 0.5*x^2 - x*sin(t)", &c).unwrap();
        let spec = AlmostProductSpec::parse(&c, &[vec!["0.25".into()]], Some(&["0.5".into()])).unwrap();
        let reg = build_regularized_lagrangian(&sys, &spec, &linear_connection(&c, "0.1*t", "0", Some("0.2")), Hypothesis::Declared).unwrap();
        let zs: Vec<Vec<f64>> = (0..5).map(|i| reg.thickened.embed(&[0.2 * i as f64, 0.1, -0.3, 0.4, 0.5 * i as f64]).unwrap()).collect();
        restriction_check(&reg, &zs).unwrap();
        verify_regularity(&reg, &zs, 1e-9, &[0.1]).unwrap();
        let co = coisotropy_check(&reg, &zs).unwrap();
        assert!(co.max_containment() <= 1e-12);
    }

    #[test]
    fn regularized_form_is_lagrangian() {
        let c = chart(&["x"], &["f"], false);
        let sys = LagrangianSystem::from_source("0.5*xdot^2 - 0.5*x^2", &c).unwrap();
        let spec = AlmostProductSpec::parse(&c, &[vec!["x".into()]], None).unwrap();
        let reg = build_regularized_lagrangian(&sys, &spec, &linear_connection(&c, "f", "x", None), Hypothesis::Declared).unwrap();
        let pts: Vec<Vec<f64>> = (0..4).map(|i| (0..6).map(|k| ((i * 5 + k * 3) % 7) as f64 / 7.0 - 0.4).collect()).collect();
        let rep = forms::helmholtz_check(|p| forms::omega_matrix(&reg.system, p), &reg.thickened.chart, &pts, forms::FD_STEP).unwrap();
        rep.check(1e-7, 1e-6).unwrap();
    }

    #[test]
    fn hamiltonian_thickening_breaks_symmetry() {
        let c = chart(&["x"], &["f"], false);
        let sys = LagrangianSystem::from_source("0.5*xdot^2", &c).unwrap();
        let th = ThickenedChart::new(&c).unwrap();
        let split = TangentSplitSpec::zero(&c);
        let p = th.embed(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let w = hamiltonian_thickened_form(&sys, &split, &th, &p).unwrap();
        let ix = |n: &str| th.chart.index_of(n).unwrap();
        assert_eq!(w[(ix("mudot_1"), ix("f"))], 1.0);
        assert_eq!(w[(ix("fdot"), ix("mu_1"))], -1.0);
        let rep = forms::helmholtz_check(|q| hamiltonian_thickened_form(&sys, &split, &th, q), &th.chart, &[p], forms::FD_STEP).unwrap();
        assert_eq!(rep.max_symmetry(), 2.0);
        assert!(rep.max_closure() < 1e-12);
    }

    #[test]
    fn nijenhuis_of_constant_and_twisted_splits() {
        let c = chart(&["x", "y"], &["f"], false);
        let zero = AlmostProductSpec::parse(&c, &[vec!["0.3".into(), "-1".into()]], None).unwrap();
        let pts = vec![vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0]];
        assert_eq!(almost_product_nijenhuis(&zero, &c, &pts).unwrap(), 0.0);
        // Horizontal distribution span{∂x, ∂y + x∂f} is not integrable.
        let twisted = AlmostProductSpec::parse(&c, &[vec!["0".into(), "x".into()]], None).unwrap();
        assert!(almost_product_nijenhuis(&twisted, &c, &pts).unwrap() > 0.5);
    }
}
