//! Pointwise tensors on tangent and jet charts: lifts, the vertical
//! endomorphism, the Liouville field, tangent-structure axioms and the
//! Lagrangian complement construction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chart::ChartSpec;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::linalg::{self, RANK_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TensorKind {
    Vector,
    Covector,
    Endomorphism,
    TwoForm,
}

/// Components of a tensor in the chart basis at a base point.
/// Vectors and covectors are stored as single columns.
#[derive(Debug, Clone)]
pub struct TensorAtPoint {
    pub kind: TensorKind,
    pub components: DMatrix<f64>,
    pub base_point: Vec<f64>,
}

impl TensorAtPoint {
    pub fn vector(v: DVector<f64>, base_point: &[f64]) -> Self {
        let n = v.len();
        TensorAtPoint { kind: TensorKind::Vector, components: DMatrix::from_column_slice(n, 1, v.as_slice()), base_point: base_point.to_vec() }
    }

    pub fn covector(v: DVector<f64>, base_point: &[f64]) -> Self {
        TensorAtPoint { kind: TensorKind::Covector, ..Self::vector(v, base_point) }
    }

    pub fn endomorphism(m: DMatrix<f64>, base_point: &[f64]) -> Self {
        TensorAtPoint { kind: TensorKind::Endomorphism, components: m, base_point: base_point.to_vec() }
    }

    /// Skew-symmetrizes `m`; returns the tensor and the removed asymmetry.
    pub fn two_form(m: DMatrix<f64>, base_point: &[f64]) -> (Self, f64) {
        let asym = linalg::skew_defect(&m);
        let skew = (&m - m.transpose()) * 0.5;
        (TensorAtPoint { kind: TensorKind::TwoForm, components: skew, base_point: base_point.to_vec() }, asym)
    }

    /// Column view for vectors and covectors.
    pub fn column(&self) -> DVector<f64> {
        self.components.column(0).into_owned()
    }
}

/// Linearly independent columns at a common base point.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub basis: DMatrix<f64>,
    pub rank: usize,
}

/// Independence threshold on the normalized basis matrix.
pub const INDEPENDENCE_TOL: f64 = 1e-10;

impl SubspaceBasis {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let k = basis.ncols();
        if k > 0 {
            let mut normed = basis.clone();
            for mut c in normed.column_iter_mut() {
                let n = c.norm();
                if n == 0.0 {
                    return Err(Error::PreconditionViolated { hypothesis: "basis columns are non-zero".into(), residual: 0.0 });
                }
                c /= n;
            }
            let smin = linalg::singular_values(&normed).last().copied().unwrap_or(0.0);
            if k > basis.nrows() || smin <= INDEPENDENCE_TOL {
                return Err(Error::PreconditionViolated { hypothesis: "basis columns are linearly independent".into(), residual: smin });
            }
        }
        Ok(SubspaceBasis { basis, rank: k })
    }

    /// Wraps an orthonormal basis (e.g. a computed kernel) without re-checking.
    pub fn orthonormal(basis: DMatrix<f64>) -> Self {
        let rank = basis.ncols();
        SubspaceBasis { basis, rank }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `X^V = X^i ∂/∂v^i`.
pub fn vertical_lift(chart: &ChartSpec, x_base: &[f64], point: &[f64]) -> Result<TensorAtPoint> {
    check_len(chart.config_dim(), x_base.len())?;
    check_len(chart.dim(), point.len())?;
    let mut v = DVector::zeros(chart.dim());
    for (k, &vi) in chart.velocity_indices().iter().enumerate() {
        v[vi] = x_base[k];
    }
    Ok(TensorAtPoint::vector(v, point))
}

/// `X^C = X^i ∂/∂q^i + (v^k ∂X^i/∂q^k [+ ∂X^i/∂t]) ∂/∂v^i`.
pub fn complete_lift(chart: &ChartSpec, x_base: &[Expression], point: &[f64]) -> Result<TensorAtPoint> {
    check_len(chart.config_dim(), x_base.len())?;
    check_len(chart.dim(), point.len())?;
    let base = chart.base_indices();
    let vel = chart.velocity_indices();
    let mut allowed: Vec<usize> = base.clone();
    allowed.extend(chart.time_index());
    let mut cols = base.clone();
    cols.extend(chart.time_index());
    let mut out = DVector::zeros(chart.dim());
    for (i, xi) in x_base.iter().enumerate() {
        if let Some(bad) = xi.referenced().into_iter().find(|k| !allowed.contains(k)) {
            return Err(Error::PreconditionViolated {
                hypothesis: format!("base field depends only on base coordinates (found `{}`)", chart.names()[bad]),
                residual: f64::NAN,
            });
        }
        let (value, grad) = xi.eval_gradient_on(point, &cols)?;
        let mut dv: f64 = base.iter().enumerate().map(|(k, _)| point[vel[k]] * grad[k]).sum();
        if chart.has_time() {
            dv += grad[base.len()];
        }
        out[base[i]] = value;
        out[vel[i]] = dv;
    }
    Ok(TensorAtPoint::vector(out, point))
}

/// Matrix of `S = dq^j ⊗ ∂/∂v^j`, or `(dq^j − v^j dt) ⊗ ∂/∂v^j` on jet charts.
pub fn vertical_endomorphism(chart: &ChartSpec, point: &[f64]) -> TensorAtPoint {
    TensorAtPoint::endomorphism(s_matrix(chart, point), point)
}

pub(crate) fn s_matrix(chart: &ChartSpec, point: &[f64]) -> DMatrix<f64> {
    let n = chart.dim();
    let mut s = DMatrix::zeros(n, n);
    let t = chart.time_index();
    for (&q, &v) in chart.base_indices().iter().zip(chart.velocity_indices().iter()) {
        s[(v, q)] = 1.0;
        if let Some(t) = t {
            s[(v, t)] = -point[v];
        }
    }
    s
}

/// `Δ = v^j ∂/∂v^j`.
pub fn liouville_field(chart: &ChartSpec, point: &[f64]) -> TensorAtPoint {
    TensorAtPoint::vector(liouville_vector(chart, point), point)
}

pub(crate) fn liouville_vector(chart: &ChartSpec, point: &[f64]) -> DVector<f64> {
    let mut d = DVector::zeros(chart.dim());
    for &v in &chart.velocity_indices() {
        d[v] = point[v];
    }
    d
}

/// Per-sample residuals of the tangent (or jet) structure axioms.
#[derive(Debug, Clone, Serialize)]
pub struct TangentAxioms {
    pub rank_s: usize,
    pub expected_rank: usize,
    pub s_squared: f64,
    /// Gap between the projectors onto Im S and ker S (autonomous only).
    pub image_kernel_gap: f64,
    /// Distance of Δ from Im S (autonomous only).
    pub liouville_in_image: f64,
    /// `max |(L_Δ S + S)(∂_k)|` (autonomous only).
    pub lie_residual: f64,
    /// `max |dt(S(·))|` (jet only).
    pub dt_of_image: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TangentStructureReport {
    pub samples: Vec<TangentAxioms>,
    /// Frölicher–Nijenhuis bracket `[S, S]`: zero because the canonical
    /// components are constant (jet: affine in v with closed coefficients).
    pub nijenhuis: f64,
}

impl TangentStructureReport {
    pub fn worst(&self) -> (&'static str, f64) {
        let mut worst = ("rank", 0.0);
        for s in &self.samples {
            let rank_gap = (s.rank_s as f64 - s.expected_rank as f64).abs();
            for (name, r) in [
                ("rank", rank_gap),
                ("s_squared", s.s_squared),
                ("image_equals_kernel", s.image_kernel_gap),
                ("liouville_in_image", s.liouville_in_image),
                ("lie_derivative", s.lie_residual),
                ("dt_of_image", s.dt_of_image),
            ] {
                if r > worst.1 {
                    worst = (name, r);
                }
            }
        }
        worst
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        let (name, r) = self.worst();
        if r > tol {
            return Err(Error::ToleranceExceeded { check: name.into(), residual: r, tol });
        }
        Ok(())
    }
}

/// Central difference of `f` at `0` with one Richardson extrapolation.
pub fn richardson<F>(f: F, h: f64) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    richardson_try(|s| Ok(f(s)), h).expect("infallible")
}

/// [`richardson`] for fallible functions.
pub fn richardson_try<F>(f: F, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let d = |h: f64| -> Result<DMatrix<f64>> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let d1 = d(h)?;
    let d2 = d(h / 2.0)?;
    Ok((d2 * 4.0 - d1) / 3.0)
}

/// Checks the tangent-structure axioms of an endomorphism field at samples.
/// `s_field` is normally [`vertical_endomorphism`]; passing a perturbed field
/// exercises the negative path. `h` is the flow-derivative step.
pub fn verify_tangent_structure<F>(chart: &ChartSpec, s_field: F, samples: &[Vec<f64>], h: f64) -> Result<TangentStructureReport>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Sync,
{
    if samples.is_empty() {
        return Err(Error::PreconditionViolated { hypothesis: "at least one sample".into(), residual: 0.0 });
    }
    let d = chart.config_dim();
    let vel = chart.velocity_indices();
    let jet = chart.has_time();
    let per: Vec<Result<TangentAxioms>> = crate::par::map(samples, |_, p| {
        check_len(chart.dim(), p.len())?;
        let s = s_field(p);
        let s2 = (&s * &s).abs().max();
        let rank_s = linalg::rank(&s, RANK_TOL);
        let mut ax = TangentAxioms {
            rank_s,
            expected_rank: d,
            s_squared: s2,
            image_kernel_gap: 0.0,
            liouville_in_image: 0.0,
            lie_residual: 0.0,
            dt_of_image: 0.0,
        };
        if jet {
            let t = chart.time_index().unwrap();
            ax.dt_of_image = s.row(t).abs().max();
        } else {
            let im = linalg::column_space(&s, RANK_TOL);
            let ker = linalg::null_space(&s, RANK_TOL);
            ax.image_kernel_gap = linalg::subspace_gap(&im, &ker);
            ax.liouville_in_image = linalg::distance_to_span(&im, &liouville_vector(chart, p));
            // Pullback of S along the flow (q, v) ↦ (q, e^s v) of Δ.
            let pulled = |sv: f64| {
                let mut moved = p.clone();
                let mut jac = DMatrix::<f64>::identity(p.len(), p.len());
                let mut inv = DMatrix::<f64>::identity(p.len(), p.len());
                for &v in &vel {
                    moved[v] *= sv.exp();
                    jac[(v, v)] = sv.exp();
                    inv[(v, v)] = (-sv).exp();
                }
                &inv * s_field(&moved) * &jac
            };
            let lie = richardson(pulled, h);
            ax.lie_residual = (lie + &s).abs().max();
        }
        Ok(ax)
    });
    Ok(TangentStructureReport { samples: per.into_iter().collect::<Result<_>>()?, nijenhuis: 0.0 })
}

/// `ω(x, y) = xᵀ Ω y`.
pub fn omega_apply(omega: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * omega * y)[(0, 0)]
}

/// Tolerance for the Lagrangian complement hypotheses and guarantees.
pub const COMPLEMENT_TOL: f64 = 1e-10;

fn span_defect(span: &DMatrix<f64>, vectors: &DMatrix<f64>) -> f64 {
    let q = linalg::column_space(span, RANK_TOL);
    vectors
        .column_iter()
        .map(|c| linalg::distance_to_span(&q, &c.into_owned()))
        .fold(0.0, f64::max)
}

fn require(name: &str, residual: f64, tol: f64) -> Result<()> {
    if residual > tol || residual.is_nan() {
        return Err(Error::PreconditionViolated { hypothesis: name.into(), residual });
    }
    Ok(())
}

/// Replaces the `J`-invariant complement `W` of the Lagrangian subspace `L`
/// by the Lagrangian `J`-invariant complement `{w + l_w}` with
/// `l_w = −½ φ⁻¹(i_w ω|_W)`, `φ(l) = (i_l ω)|_W`.
pub fn lagrangian_complement(
    omega: &DMatrix<f64>,
    l_basis: &SubspaceBasis,
    w_basis: &SubspaceBasis,
    j: &DMatrix<f64>,
) -> Result<SubspaceBasis> {
    let n = omega.nrows();
    check_len(n, omega.ncols())?;
    check_len(n, l_basis.ambient_dim())?;
    check_len(n, w_basis.ambient_dim())?;
    check_len(n, j.nrows())?;
    let (l, w) = (&l_basis.basis, &w_basis.basis);
    let scale = |m: &DMatrix<f64>| 1.0f64.max(m.abs().max());
    let (so, sl, sw, sj) = (scale(omega), scale(l), scale(w), scale(j));

    require("omega is skew", linalg::skew_defect(omega), COMPLEMENT_TOL * so)?;
    require("omega is nondegenerate", (n - linalg::rank(omega, RANK_TOL)) as f64, 0.0)?;
    require("L has half the ambient dimension", (2 * l.ncols()).abs_diff(n) as f64, 0.0)?;
    require("W has half the ambient dimension", (2 * w.ncols()).abs_diff(n) as f64, 0.0)?;
    require("L is isotropic", (l.transpose() * omega * l).abs().max(), COMPLEMENT_TOL * so * sl * sl)?;
    let mut lw = l.clone().resize_horizontally(l.ncols() + w.ncols(), 0.0);
    lw.columns_mut(l.ncols(), w.ncols()).copy_from(w);
    require("L and W are complementary", (n - linalg::rank(&lw, COMPLEMENT_TOL)) as f64, 0.0)?;
    require("J squares to zero", (j * j).abs().max(), COMPLEMENT_TOL * sj * sj)?;
    let sym = j.transpose() * omega;
    require("omega(Jx, y) = omega(Jy, x)", (&sym - sym.transpose()).abs().max(), COMPLEMENT_TOL * sj * so)?;
    require("J(L) lies in L", span_defect(l, &(j * l)), COMPLEMENT_TOL * sj * sl)?;
    require("J(W) lies in W", span_defect(w, &(j * w)), COMPLEMENT_TOL * sj * sw)?;

    // Φ_kj = ω(L_j, W_k); C_jk = ω(W_j, W_k).
    let phi = (l.transpose() * omega * w).transpose();
    let sv = linalg::singular_values(&phi);
    let (hi, lo) = (sv.first().copied().unwrap_or(0.0), sv.last().copied().unwrap_or(0.0));
    if hi == 0.0 || lo / hi <= COMPLEMENT_TOL {
        return Err(Error::SingularPairing(lo));
    }
    let c = w.transpose() * omega * w;
    let lu = phi.lu();
    let coeff = lu.solve(&c.transpose()).ok_or(Error::SingularPairing(lo))? * -0.5;
    let a = w + l * coeff;

    let sa = scale(&a);
    let iso = (a.transpose() * omega * &a).abs().max();
    if iso > COMPLEMENT_TOL * so * sa * sa {
        return Err(Error::ToleranceExceeded { check: "complement isotropy".into(), residual: iso, tol: COMPLEMENT_TOL });
    }
    let inv = span_defect(&a, &(j * &a));
    if inv > COMPLEMENT_TOL * sj * sa {
        return Err(Error::ToleranceExceeded { check: "complement J-invariance".into(), residual: inv, tol: COMPLEMENT_TOL });
    }
    lw.columns_mut(l.ncols(), w.ncols()).copy_from(&a);
    if linalg::rank(&lw, COMPLEMENT_TOL) != n {
        return Err(Error::ToleranceExceeded { check: "complementarity".into(), residual: 1.0, tol: COMPLEMENT_TOL });
    }
    SubspaceBasis::new(a)
}
