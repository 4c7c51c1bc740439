//! Poincaré–Cartan forms, energy and Hessian of a Lagrangian, the pointwise
//! Hamilton and Reeb solves, and the Helmholtz and SODE checks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chart::ChartSpec;
use crate::error::{Error, Result};
use crate::expr::{Expression, SecondOrder};
use crate::geometry::{self, richardson_try, SubspaceBasis, TensorAtPoint};
use crate::linalg::{self, RANK_TOL};

/// A Lagrangian on a tangent chart (autonomous) or first-jet chart.
#[derive(Debug, Clone)]
pub struct LagrangianSystem {
    pub chart: Arc<ChartSpec>,
    pub lagrangian: Expression,
    pub autonomous: bool,
}

impl LagrangianSystem {
    pub fn new(lagrangian: Expression) -> Self {
        let chart = lagrangian.chart().clone();
        let autonomous = !chart.has_time();
        LagrangianSystem { chart, lagrangian, autonomous }
    }

    pub fn from_source(source: &str, chart: &Arc<ChartSpec>) -> Result<Self> {
        Ok(Self::new(Expression::parse(source, chart)?))
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    fn derivs(&self, point: &[f64]) -> Result<SecondOrder> {
        self.lagrangian.second_order(point)
    }
}

/// θ components and their Jacobian `J[i][k] = ∂θ_k/∂z^i` from one sweep.
fn theta_and_jacobian(sys: &LagrangianSystem, d: &SecondOrder, point: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let n = sys.dim();
    let base = sys.chart.base_indices();
    let vel = sys.chart.velocity_indices();
    let mut theta = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    for (&b, &v) in base.iter().zip(&vel) {
        theta[b] = d.gradient[v];
        for i in 0..n {
            jac[(i, b)] = d.hessian[(i, v)];
        }
    }
    if let Some(t) = sys.chart.time_index() {
        theta[t] = d.value - vel.iter().map(|&v| point[v] * d.gradient[v]).sum::<f64>();
        for i in 0..n {
            let mut di = d.gradient[i] - vel.iter().map(|&v| point[v] * d.hessian[(i, v)]).sum::<f64>();
            if vel.contains(&i) {
                di -= d.gradient[i];
            }
            jac[(i, t)] = di;
        }
    }
    (theta, jac)
}

/// `θ_L = ∂L/∂v^j dq^j`, or `(L − q̇ ∂L/∂q̇) dt + ∂L/∂q̇ dq` on jet charts.
pub fn poincare_cartan(sys: &LagrangianSystem, point: &[f64]) -> Result<TensorAtPoint> {
    let d = sys.derivs(point)?;
    Ok(TensorAtPoint::covector(theta_and_jacobian(sys, &d, point).0, point))
}

/// Matrix `Ω` of `ω_L = −dθ_L`, with `ω(x, y) = xᵀΩy`.
pub fn omega_matrix(sys: &LagrangianSystem, point: &[f64]) -> Result<DMatrix<f64>> {
    let d = sys.derivs(point)?;
    let (_, jac) = theta_and_jacobian(sys, &d, point);
    Ok(jac.transpose() - jac)
}

/// `ω_L` as a 2-form and the asymmetry removed by skew-symmetrization.
pub fn lagrangian_2form(sys: &LagrangianSystem, point: &[f64]) -> Result<(TensorAtPoint, f64)> {
    Ok(TensorAtPoint::two_form(omega_matrix(sys, point)?, point))
}

/// `E_L = v^j ∂L/∂v^j − L`.
pub fn energy(sys: &LagrangianSystem, point: &[f64]) -> Result<f64> {
    if !sys.autonomous {
        return Err(Error::NotAutonomous);
    }
    let (value, grad) = sys.lagrangian.eval_with_gradient(point)?;
    Ok(sys.chart.velocity_indices().iter().map(|&v| point[v] * grad[v]).sum::<f64>() - value)
}

/// `dE_L` from the exact Hessian.
pub fn energy_differential(sys: &LagrangianSystem, point: &[f64]) -> Result<DVector<f64>> {
    if !sys.autonomous {
        return Err(Error::NotAutonomous);
    }
    let d = sys.derivs(point)?;
    let vel = sys.chart.velocity_indices();
    Ok(DVector::from_fn(sys.dim(), |i, _| {
        let mut s = vel.iter().map(|&v| point[v] * d.hessian[(i, v)]).sum::<f64>() - d.gradient[i];
        if vel.contains(&i) {
            s += d.gradient[i];
        }
        s
    }))
}

/// `W_ij = ∂²L/∂v^i∂v^j`.
pub fn velocity_hessian(sys: &LagrangianSystem, point: &[f64]) -> Result<DMatrix<f64>> {
    let vel = sys.chart.velocity_indices();
    Ok(sys.lagrangian.hessian_block(point, &vel, &vel)?.matrix)
}

pub fn hessian_rank(sys: &LagrangianSystem, point: &[f64], tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let w = velocity_hessian(sys, point)?;
    let r = linalg::rank(&w, tol);
    Ok((w, r))
}

#[derive(Debug, Clone, Serialize)]
pub struct HelmholtzSample {
    /// Finite-difference `max |dω_ijk|` and the worst triple.
    pub closure: f64,
    pub closure_triple: (usize, usize, usize),
    /// `max |ω(S e_i, e_j) − ω(S e_j, e_i)|` and the worst pair.
    pub symmetry: f64,
    pub symmetry_pair: (usize, usize),
    /// `ω(S e_i, e_j)` and `ω(S e_j, e_i)` at the worst pair.
    pub symmetry_values: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct HelmholtzReport {
    pub samples: Vec<HelmholtzSample>,
}

impl HelmholtzReport {
    pub fn max_closure(&self) -> f64 {
        self.samples.iter().map(|s| s.closure).fold(0.0, f64::max)
    }

    pub fn max_symmetry(&self) -> f64 {
        self.samples.iter().map(|s| s.symmetry).fold(0.0, f64::max)
    }

    pub fn worst_symmetry(&self) -> Option<&HelmholtzSample> {
        self.samples.iter().max_by(|a, b| a.symmetry.total_cmp(&b.symmetry))
    }

    pub fn check(&self, symmetry_tol: f64, closure_tol: f64) -> Result<()> {
        if self.max_symmetry() > symmetry_tol {
            return Err(Error::ToleranceExceeded { check: "i_S omega = 0".into(), residual: self.max_symmetry(), tol: symmetry_tol });
        }
        if self.max_closure() > closure_tol {
            return Err(Error::ToleranceExceeded { check: "d omega = 0".into(), residual: self.max_closure(), tol: closure_tol });
        }
        Ok(())
    }
}

/// Default finite-difference step for exterior and Lie derivatives.
pub const FD_STEP: f64 = 1e-4;

/// Helmholtz conditions for a 2-form field: closedness and `i_S ω = 0`.
pub fn helmholtz_check<F>(omega_field: F, chart: &ChartSpec, samples: &[Vec<f64>], h: f64) -> Result<HelmholtzReport>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Sync,
{
    let n = chart.dim();
    let per = crate::par::try_map(samples, |_, p| {
        if p.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: p.len() });
        }
        let omega = omega_field(p)?;
        let s = geometry::s_matrix(chart, p);
        let a = s.transpose() * &omega;
        let mut sym = (0.0, (0, 0), (0.0, 0.0));
        for i in 0..n {
            for j in 0..n {
                let r = (a[(i, j)] - a[(j, i)]).abs();
                if r > sym.0 {
                    sym = (r, (i, j), (a[(i, j)], a[(j, i)]));
                }
            }
        }
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            grads.push(richardson_try(
                |s| {
                    let mut q = p.clone();
                    q[i] += s;
                    omega_field(&q)
                },
                h,
            )?);
        }
        let mut closure = (0.0, (0, 0, 0));
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let r = (grads[i][(j, k)] + grads[j][(k, i)] + grads[k][(i, j)]).abs();
                    if r > closure.0 {
                        closure = (r, (i, j, k));
                    }
                }
            }
        }
        Ok(HelmholtzSample { closure: closure.0, closure_triple: closure.1, symmetry: sym.0, symmetry_pair: sym.1, symmetry_values: sym.2 })
    })?;
    Ok(HelmholtzReport { samples: per })
}

/// Relative residual tolerance of the pointwise linear solves.
pub const SOLVE_TOL: f64 = 1e-9;

/// Minimal-norm solution with existence and uniqueness diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct LinearSolveReport {
    pub solution: Option<Vec<f64>>,
    pub residual: f64,
    pub kernel_dim: usize,
}

impl LinearSolveReport {
    fn from_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let ls = linalg::lstsq(a, b, RANK_TOL);
        let consistent = ls.residual <= SOLVE_TOL * b.norm().max(1.0);
        LinearSolveReport {
            solution: consistent.then(|| ls.x.as_slice().to_vec()),
            residual: ls.residual,
            kernel_dim: a.ncols() - ls.rank,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.solution.is_some()
    }

    pub fn require(&self) -> Result<DVector<f64>> {
        self.solution.as_ref().map(|s| DVector::from_column_slice(s)).ok_or(Error::Inconsistent(self.residual))
    }
}

/// Solves `i_X ω = dH`, i.e. `Ωᵀ X = dH`.
pub fn hamiltonian_field(omega: &DMatrix<f64>, dh: &DVector<f64>) -> Result<LinearSolveReport> {
    if omega.nrows() != dh.len() || omega.ncols() != dh.len() {
        return Err(Error::DimensionMismatch { expected: omega.nrows(), found: dh.len() });
    }
    Ok(LinearSolveReport::from_lstsq(&omega.transpose(), dh))
}

#[derive(Debug, Clone)]
pub struct ReebReport {
    pub solve: LinearSolveReport,
    /// Basis of `ker ω ∩ ker τ`.
    pub gauge: SubspaceBasis,
}

fn stacked(omega: &DMatrix<f64>, tau: &DVector<f64>) -> DMatrix<f64> {
    let n = omega.ncols();
    let mut m = omega.transpose().resize_vertically(n + 1, 0.0);
    m.row_mut(n).copy_from(&tau.transpose());
    m
}

/// Solves `i_X ω = 0`, `τ(X) = 1` and reports the gauge kernel.
pub fn reeb_evolution_field(omega: &DMatrix<f64>, tau: &DVector<f64>) -> Result<ReebReport> {
    let n = omega.ncols();
    if omega.nrows() != n || tau.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: tau.len() });
    }
    let m = stacked(omega, tau);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let solve = LinearSolveReport::from_lstsq(&m, &rhs);
    Ok(ReebReport { solve, gauge: SubspaceBasis::orthonormal(linalg::null_space(&m, RANK_TOL)) })
}

/// Covector `dt` on a jet chart.
pub fn dt_covector(chart: &ChartSpec) -> Option<DVector<f64>> {
    chart.time_index().map(|t| {
        let mut v = DVector::zeros(chart.dim());
        v[t] = 1.0;
        v
    })
}

/// `‖S(X) − Δ‖`, or `|dt(X) − 1| + ‖S(X)‖` on jet charts.
pub fn sode_residual(x: &DVector<f64>, chart: &ChartSpec, point: &[f64]) -> f64 {
    let s = geometry::s_matrix(chart, point);
    match chart.time_index() {
        Some(t) => (x[t] - 1.0).abs() + (s * x).norm(),
        None => (s * x - geometry::liouville_vector(chart, point)).norm(),
    }
}
