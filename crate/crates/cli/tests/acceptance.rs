//! Acceptance suite. Each criterion prints one PASS/FAIL line with its pinned
//! tolerances; the process fails if any criterion fails.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lagreg_core::catalog::{self, load_scenario, Scenario, SCENARIO_NAMES};
use lagreg_core::chart::ChartSpec;
use lagreg_core::constraints::{self, degenerate_metric_consistency, detect_complete_lift, kernel_basis, run_pca};
use lagreg_core::dynamics::{self, IntegratorOptions, Method, Reference};
use lagreg_core::forms::{self, helmholtz_check, LagrangianSystem, FD_STEP};
use lagreg_core::geometry::{lagrangian_complement, SubspaceBasis};
use lagreg_core::linalg::{self, RANK_TOL};
use lagreg_core::regularizer::{self, build_regularized_lagrangian, Hypothesis, RegularizedSystem, TangentSplitSpec, ThickenedChart, TulczyjewLayout};
use lagreg_core::sampling::{grid, SamplingSpec};
use lagreg_core::Expression;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const AUTODIFF_REL_TOL: f64 = 1e-6;
const AUTODIFF_FD_STEP: f64 = 1e-5;
const AUTODIFF_BUDGET: Duration = Duration::from_secs(5);
const HELMHOLTZ_SYMMETRY_TOL: f64 = 1e-7;
const HELMHOLTZ_CLOSURE_TOL: f64 = 1e-6;
const OBSTRUCTION_TOL: f64 = 1e-12;
const LIFT_TOL: f64 = 1e-6;
const RESTRICTION_TOL: f64 = 1e-12;
const REGULARITY_TOL: f64 = 1e-9;
const COISOTROPY_TOL: f64 = 1e-9;
const REGULARIZATION_BUDGET: Duration = Duration::from_secs(30);
const MU_TOL: f64 = 1e-7;
const REFERENCE_TOL: f64 = 1e-6;
const PCA_TOL: f64 = 1e-9;
const CONSISTENCY_TOL: f64 = 1e-12;
const COMPLEMENT_TOL: f64 = 1e-10;
const TULCZYJEW_TOL: f64 = 1e-12;
const RK4_RATIO: (f64, f64) = (14.0, 18.0);
const ENERGY_DRIFT_TOL: f64 = 1e-6;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn chart(leaf: &[&str], fiber: &[&str], time: bool) -> Arc<ChartSpec> {
    Arc::new(ChartSpec::new(leaf, fiber, time).unwrap())
}

fn e<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Random polynomial of total degree ≤ 4 in the chart coordinates.
fn random_polynomial(rng: &mut ChaCha8Rng, names: &[&str]) -> String {
    let terms = rng.gen_range(1..=6);
    (0..terms)
        .map(|_| {
            let c: f64 = rng.gen_range(-2.0..2.0);
            let mut term = format!("({c})");
            let degree = rng.gen_range(0..=4);
            for _ in 0..degree {
                term.push('*');
                term.push_str(names[rng.gen_range(0..names.len())]);
            }
            term
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

fn c1_autodiff() -> Verdict {
    let c = chart(&["x", "y"], &["f"], true);
    let names = c.names();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let src = random_polynomial(&mut rng, &names);
        let expr = e(Expression::parse(&src, &c))?;
        let p: Vec<f64> = (0..c.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = e(expr.eval_with_gradient(&p))?;
        for (i, g) in grad.iter().enumerate() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += AUTODIFF_FD_STEP;
            b[i] -= AUTODIFF_FD_STEP;
            let fd = (e(expr.eval(&a))? - e(expr.eval(&b))?) / (2.0 * AUTODIFF_FD_STEP);
            worst = worst.max((g - fd).abs() / g.abs().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    ensure(
        worst <= AUTODIFF_REL_TOL && elapsed < AUTODIFF_BUDGET,
        format!("1000 polynomials, max rel err {worst:.3e} <= {AUTODIFF_REL_TOL:e}, {:.2}s < {}s", elapsed.as_secs_f64(), AUTODIFF_BUDGET.as_secs()),
    )
}

fn regularize_declared(s: &Scenario) -> Result<RegularizedSystem, String> {
    e(build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Declared))
}

fn c2_helmholtz() -> Verdict {
    let mut worst = (0.0f64, 0.0f64);
    let mut checked = Vec::new();
    for name in SCENARIO_NAMES {
        let s = e(load_scenario(name))?;
        let reg = regularize_declared(&s)?;
        for sys in [&s.system, &reg.system] {
            let pts = e(s.sampling.clone().with_count(50).with_seed(2).sample(&sys.chart))?;
            let rep = e(helmholtz_check(|p| forms::omega_matrix(sys, p), &sys.chart, &pts, FD_STEP))?;
            worst = (worst.0.max(rep.max_symmetry()), worst.1.max(rep.max_closure()));
        }
        checked.push(name);
    }
    // Hamiltonian-style thickening of the cyclic particle: ω̂(S∂_μ̇, ∂_f) = 1
    // while ω̂(S∂_f, ∂_μ̇) = −1, so i_S ω̂ cannot vanish.
    let s = catalog::cyclic_free_particle();
    let thick = e(ThickenedChart::new(s.chart()))?;
    let split = TangentSplitSpec::zero(s.chart());
    let pts = e(SamplingSpec::default().with_count(50).sample(&thick.chart))?;
    let rep = e(helmholtz_check(|p| regularizer::hamiltonian_thickened_form(&s.system, &split, &thick, p), &thick.chart, &pts, FD_STEP))?;
    let w = rep.worst_symmetry().ok_or("no samples")?;
    let obstruction = (rep.max_symmetry() - 2.0).abs() <= OBSTRUCTION_TOL && (w.symmetry_values.0 + w.symmetry_values.1).abs() <= OBSTRUCTION_TOL;
    ensure(
        worst.0 <= HELMHOLTZ_SYMMETRY_TOL && worst.1 <= HELMHOLTZ_CLOSURE_TOL && obstruction && rep.max_closure() <= HELMHOLTZ_CLOSURE_TOL,
        format!(
            "{} scenarios + regularizations: i_S residual {:.3e} <= {HELMHOLTZ_SYMMETRY_TOL:e}, d residual {:.3e} <= {HELMHOLTZ_CLOSURE_TOL:e}; Hamiltonian thickening symmetry defect {} with values ({}, {})",
            checked.len(),
            worst.0,
            worst.1,
            rep.max_symmetry(),
            w.symmetry_values.0,
            w.symmetry_values.1
        ),
    )
}

fn c3_kernel() -> Verdict {
    let s = catalog::cyclic_free_particle();
    let pts = e(s.sampling.sample(s.chart()))?;
    let ranks: Vec<usize> = pts.iter().map(|p| forms::omega_matrix(&s.system, p).map(|w| kernel_basis(&w, None, RANK_TOL).rank)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let lift = e(detect_complete_lift(&s.system, &pts, LIFT_TOL))?;
    let c = chart(&["x"], &["f"], false);
    let neg = e(LagrangianSystem::from_source("0.5*(xdot - f)^2", &c))?;
    let neg_pts = e(SamplingSpec::default().sample(&c))?;
    let neg_lift = e(detect_complete_lift(&neg, &neg_pts, LIFT_TOL))?;
    ensure(
        pts.len() == 20 && ranks.iter().all(|&r| r == 2) && lift.is_complete_lift && !neg_lift.is_complete_lift,
        format!(
            "cyclic_free_particle: ranks {:?} at {} samples, complete lift {}; ½(ẋ−f)²: complete lift {} (detector tol {LIFT_TOL:e})",
            ranks.iter().collect::<std::collections::BTreeSet<_>>(),
            pts.len(),
            lift.is_complete_lift,
            neg_lift.is_complete_lift
        ),
    )
}

fn c4_regularization() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for s in [catalog::cyclic_free_particle(), catalog::degenerate_metric_particle(), catalog::degenerate_metric_timedep()] {
        let pts = e(s.sampling.clone().with_count(50).with_seed(4).sample(s.chart()))?;
        if let Some(m) = &s.metric {
            ok &= e(degenerate_metric_consistency(m, s.kernel_field.as_deref(), &pts))?.consistent(CONSISTENCY_TOL);
        }
        let lift = e(detect_complete_lift(&s.system, &pts, LIFT_TOL))?;
        let reg = e(build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Detected(&lift)))?;
        let zero: Vec<Vec<f64>> = e(pts.iter().map(|p| reg.thickened.embed(p)).collect())?;
        let res = e(regularizer::restriction_check(&reg, &zero))?;
        let dev = res.max_value_deviation().max(res.max_theta_deviation());
        let regular = e(regularizer::verify_regularity(&reg, &zero, REGULARITY_TOL, &[]))?;
        let cois = e(regularizer::coisotropy_check(&reg, &zero))?;
        let r = reg.thickened.fiber_count();
        let dims_ok = cois.samples.iter().all(|c| c.orthogonal_dim == 2 * r);
        ok &= dev <= RESTRICTION_TOL && regular.sigma_min.len() == 50 && dims_ok && cois.max_containment() <= COISOTROPY_TOL;
        lines.push(format!(
            "{}: restriction {dev:.1e}, min sigma {:.3e}, orth dim 2r={}, containment {:.1e}",
            s.name,
            regular.sigma_min.iter().copied().fold(f64::INFINITY, f64::min),
            2 * r,
            cois.max_containment()
        ));
    }
    let elapsed = start.elapsed();
    ensure(
        ok && elapsed < REGULARIZATION_BUDGET,
        format!("{}; tols {RESTRICTION_TOL:e}/{REGULARITY_TOL:e}/{COISOTROPY_TOL:e}; {:.2}s < {}s", lines.join("; "), elapsed.as_secs_f64(), REGULARIZATION_BUDGET.as_secs()),
    )
}

type Closed = Box<dyn Fn(f64) -> Vec<f64> + Sync>;

/// Closed-form constrained motion in original coordinates, with μ ≡ 0.
fn closed_form(name: &str, init: &[f64]) -> Closed {
    let init = init.to_vec();
    match name {
        // ẍ = 0, f carried along at its initial rate.
        "cyclic_free_particle" => Box::new(move |t| vec![init[0] + init[2] * t, init[1] + init[3] * t, init[2], init[3]]),
        // ẍ = −x, ḟ = P ẋ with P = 1/2.
        "degenerate_metric_particle" => Box::new(move |t| {
            let (x0, f0, v0) = (init[0], init[1], init[2]);
            let x = x0 * t.cos() + v0 * t.sin();
            let v = -x0 * t.sin() + v0 * t.cos();
            vec![x, f0 + 0.5 * (x - x0), v, 0.5 * v]
        }),
        // ẍ = −x − sin t, ḟ = Q + P ẋ with P = 1/4, Q = 1/2.
        "degenerate_metric_timedep" => Box::new(move |t| {
            let (x0, f0, v0) = (init[0], init[1], init[2]);
            let (s, c) = t.sin_cos();
            let x = x0 * c + (v0 - 0.5) * s + 0.5 * t * c;
            let v = -x0 * s + (v0 - 0.5) * c + 0.5 * c - 0.5 * t * s;
            vec![x, f0 + 0.5 * t + 0.25 * (x - x0), v, 0.5 + 0.25 * v, t]
        }),
        _ => unreachable!(),
    }
}

fn c5_tangency() -> Verdict {
    let mut ok = true;
    let mut lines = Vec::new();
    for name in ["cyclic_free_particle", "degenerate_metric_particle", "degenerate_metric_timedep"] {
        let s = e(load_scenario(name))?;
        let sim = s.simulation.as_ref().ok_or("scenario has no simulation")?;
        let pts = e(s.sampling.sample(s.chart()))?;
        let lift = e(detect_complete_lift(&s.system, &pts, LIFT_TOL))?;
        let reg = e(build_regularized_lagrangian(&s.system, &s.almost_product, &s.connection, Hypothesis::Detected(&lift)))?;
        let init = e(reg.thickened.embed(&sim.initial))?;
        let traj = e(dynamics::integrate(&reg.system, &init, (0.0, 10.0), &IntegratorOptions::default()))?;
        let reference = closed_form(name, &sim.initial);
        let dev = e(dynamics::compare_projection(&traj, Reference::Analytic(&*reference)))?;
        ok &= dev.max_mu_norm <= MU_TOL && dev.max_original_deviation <= REFERENCE_TOL && traj.times.last() == Some(&10.0);
        lines.push(format!("{name}: max|(mu,mudot)| {:.1e}, deviation {:.1e}", dev.max_mu_norm, dev.max_original_deviation));
    }
    ensure(ok, format!("{} (tols {MU_TOL:e}, {REFERENCE_TOL:e}; rk45 defaults over [0,10])", lines.join("; ")))
}

fn c6_pca() -> Verdict {
    let s = catalog::affine_lagrangian();
    let g = grid(s.chart(), &[0, 1], 10);
    let origin = g.iter().position(|p| p.iter().all(|&v| v == 0.0)).ok_or("origin missing")?;
    let (omega, dh) = constraints::lagrangian_fields(&s.system);
    let run = e(run_pca(&omega, &dh, &g, 5, PCA_TOL))?;
    let survivors = run.history.last().cloned().unwrap_or_default();
    let linear = e(catalog::affine_lagrangian_variant(catalog::AffineForm::Zero, "x"))?;
    let (omega, dh) = constraints::lagrangian_fields(&linear.system);
    let run_x = e(run_pca(&omega, &dh, &g, 5, PCA_TOL))?;
    ensure(
        g.len() == 441 && run.stabilized && survivors == vec![origin] && run_x.inconsistent && run_x.history.last().is_some_and(|h| h.is_empty()),
        format!(
            "V=½(x²+f²): stabilized {} at step {:?}, survivors {:?} (origin = {origin}); V=x: survivors {:?}, inconsistent {} (tol {PCA_TOL:e})",
            run.stabilized,
            run.stabilized_at,
            survivors,
            run_x.history.last().map(|h| h.len()),
            run_x.inconsistent
        ),
    )
}

fn c7_consistency() -> Verdict {
    let mut passing = Vec::new();
    for s in [catalog::degenerate_metric_particle(), catalog::degenerate_metric_timedep(), e(catalog::degenerate_metric_particle_with(["0", "0"], "0.5*x^2 + 0.3*x"))?] {
        let pts = e(s.sampling.sample(s.chart()))?;
        let rep = e(degenerate_metric_consistency(s.metric.as_ref().unwrap(), s.kernel_field.as_deref(), &pts))?;
        passing.push(rep.max.iter().copied().fold(0.0, f64::max));
    }
    let s = e(catalog::degenerate_metric_particle_with(["0", "x"], "0.5*x^2"))?;
    let pts = e(s.sampling.sample(s.chart()))?;
    let rep = e(degenerate_metric_consistency(s.metric.as_ref().unwrap(), s.kernel_field.as_deref(), &pts))?;
    let cond2_min = rep.samples.iter().map(|c| c.condition_2).fold(f64::INFINITY, f64::min);
    ensure(
        passing.iter().all(|&m| m <= CONSISTENCY_TOL) && rep.failing_condition(CONSISTENCY_TOL) == Some(2) && (rep.max[1] - 1.0).abs() <= CONSISTENCY_TOL && (cond2_min - 1.0).abs() <= CONSISTENCY_TOL,
        format!(
            "A=0 residuals {:?} <= {CONSISTENCY_TOL:e}; A=x df fails condition {:?} with residual {} (min {cond2_min}), 1 ± {CONSISTENCY_TOL:e}",
            passing,
            rep.failing_condition(CONSISTENCY_TOL),
            rep.max[1]
        ),
    )
}

fn canonical(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |i, j| if j == i + n { 1.0 } else if i == j + n { -1.0 } else { 0.0 })
}

/// Independent checks of the three guarantees on a returned complement.
fn complement_defects(omega: &DMatrix<f64>, l: &DMatrix<f64>, j: &DMatrix<f64>, a: &DMatrix<f64>) -> (f64, f64, usize) {
    let scale = omega.abs().max().max(1.0) * a.abs().max().max(1.0).powi(2);
    let iso = (a.transpose() * omega * a).abs().max() / scale;
    let q = linalg::column_space(a, RANK_TOL);
    let ja = j * a;
    let inv = ja.column_iter().map(|c| linalg::distance_to_span(&q, &c.into_owned())).fold(0.0, f64::max) / a.abs().max().max(1.0);
    let mut la = l.clone().resize_horizontally(l.ncols() + a.ncols(), 0.0);
    la.columns_mut(l.ncols(), a.ncols()).copy_from(a);
    (iso, inv, linalg::rank(&la, COMPLEMENT_TOL))
}

/// Random instance in dimension 8: canonical data with a nilpotent `J`
/// and a non-Lagrangian graph complement, pushed through a random linear map.
fn random_complement_instance(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = 4;
    // J = diag(A, −Aᵀ) with A² = 0 keeps L = span{q}, makes Jᵀω symmetric.
    let mut a = DMatrix::zeros(n, n);
    a[(0, 2)] = rng.gen_range(0.5..1.5);
    a[(1, 3)] = rng.gen_range(0.5..1.5);
    let mut j0 = DMatrix::zeros(2 * n, 2 * n);
    j0.view_mut((0, 0), (n, n)).copy_from(&a);
    j0.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    // W = {(C p, p)} is J-invariant iff A C + C Aᵀ = 0; pick C in that kernel.
    let op = DMatrix::from_fn(n * n, n * n, |row, col| {
        let mut e = DMatrix::zeros(n, n);
        e[(col % n, col / n)] = 1.0;
        let img = &a * &e + &e * a.transpose();
        img[(row % n, row / n)]
    });
    let kernel = linalg::null_space(&op, 1e-12);
    let coeffs: Vec<f64> = (0..kernel.ncols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cvec = &kernel * nalgebra::DVector::from_vec(coeffs);
    let c = DMatrix::from_column_slice(n, n, cvec.as_slice());
    let mut w0 = DMatrix::zeros(2 * n, n);
    w0.view_mut((0, 0), (n, n)).copy_from(&c);
    w0.view_mut((n, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let l0 = DMatrix::identity(2 * n, n);
    let s = DMatrix::identity(2 * n, 2 * n) + DMatrix::from_fn(2 * n, 2 * n, |_, _| rng.gen_range(-0.3..0.3));
    let s_inv = s.clone().try_inverse().expect("near-identity map is invertible");
    let omega = s_inv.transpose() * canonical(n) * &s_inv;
    (omega, &s * l0, &s * w0, &s * j0 * &s_inv)
}

fn c8_complement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = (0.0f64, 0.0f64);
    let mut full_rank = true;
    for _ in 0..100 {
        let (omega, l, w, j) = random_complement_instance(&mut rng);
        let res = e(lagrangian_complement(&omega, &e(SubspaceBasis::new(l.clone()))?, &e(SubspaceBasis::new(w))?, &j))?;
        let (iso, inv, rank) = complement_defects(&omega, &l, &j, &res.basis);
        worst = (worst.0.max(iso), worst.1.max(inv));
        full_rank &= rank == 8;
    }
    // Worked instance in (q1, q2, p1, p2): W = span{∂p1, ∂q1 + ∂p2}, J = 0.
    let omega = canonical(2);
    let l = DMatrix::identity(4, 2);
    let w = DMatrix::from_column_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let res = e(lagrangian_complement(&omega, &e(SubspaceBasis::new(l.clone()))?, &e(SubspaceBasis::new(w))?, &DMatrix::zeros(4, 4)))?;
    let expected = DMatrix::from_column_slice(4, 2, &[0.0, 0.5, 1.0, 0.0, 0.5, 0.0, 0.0, 1.0]);
    let gap = linalg::subspace_gap(&linalg::column_space(&res.basis, RANK_TOL), &linalg::column_space(&expected, RANK_TOL));
    ensure(
        worst.0 <= COMPLEMENT_TOL && worst.1 <= COMPLEMENT_TOL && full_rank && gap <= COMPLEMENT_TOL,
        format!("100 dim-8 instances: isotropy {:.1e}, J-invariance {:.1e}, complementary {full_rank}; worked instance gap {gap:.1e} (tol {COMPLEMENT_TOL:e})", worst.0, worst.1),
    )
}

fn c9_tulczyjew() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..100 {
        let lay = TulczyjewLayout { leaf: 1 + k % 3, fiber: 1 + k % 2, time: k % 4 == 0 };
        let mut draw = || (0..lay.len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (p, eta, xi) = (draw(), draw(), draw());
        let back = e(regularizer::tulczyjew_alpha_inverse(lay, &e(regularizer::tulczyjew_alpha(lay, &p))?))?;
        let round = back.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let lhs = e(regularizer::pairing_cotangent(lay, &e(regularizer::tulczyjew_alpha(lay, &eta))?, &xi))?;
        let rhs = e(regularizer::pairing_tangent_lift(lay, &eta, &e(regularizer::delta_foliated(lay, &xi))?))?;
        worst = (worst.0.max(round), worst.1.max((lhs - rhs).abs()));
    }
    ensure(worst.0 <= TULCZYJEW_TOL && worst.1 <= TULCZYJEW_TOL, format!("100 points: round trip {:.1e}, transpose {:.1e} (tol {TULCZYJEW_TOL:e})", worst.0, worst.1))
}

fn c10_rk4() -> Verdict {
    let s = catalog::harmonic_oscillator();
    let t1: f64 = 2.0;
    let exact = [t1.cos(), -t1.sin()];
    let mut errs = Vec::new();
    for h in [0.1, 0.05, 0.025, 0.0125] {
        let opts = IntegratorOptions { method: Method::Rk4, step: h, ..Default::default() };
        let traj = e(dynamics::integrate(&s.system, &[1.0, 0.0], (0.0, t1), &opts))?;
        let last = traj.last().ok_or("empty trajectory")?;
        errs.push(last.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let opts = IntegratorOptions { method: Method::Rk4, step: 1e-3, ..Default::default() };
    let traj = e(dynamics::integrate(&s.system, &[1.0, 0.0], (0.0, 100.0), &opts))?;
    let drift = e(dynamics::monitor_invariants(&s.system, &traj, &[]))?.max_energy_drift;
    ensure(
        ratios.iter().all(|r| (RK4_RATIO.0..=RK4_RATIO.1).contains(r)) && drift <= ENERGY_DRIFT_TOL,
        format!("error ratios {:?} in [{}, {}]; energy drift {drift:.1e} <= {ENERGY_DRIFT_TOL:e} over [0,100] at h=1e-3", ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(), RK4_RATIO.0, RK4_RATIO.1),
    )
}

fn c11_determinism() -> Verdict {
    let run = |threads: Option<&str>| -> Result<Vec<u8>, String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lagreg"));
        cmd.args(["analyze", "--scenario", "cyclic_free_particle", "--seed", "7"]);
        if let Some(t) = threads {
            cmd.env("LAGREG_THREADS", t);
        }
        let out = cmd.output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok(out.stdout)
    };
    let (a, b, single) = (run(None)?, run(None)?, run(Some("1"))?);
    ensure(a == b && a == single && !a.is_empty(), format!("two runs {} bytes, identical {}; single-worker run identical {}", a.len(), a == b, a == single))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("autodiff fidelity", c1_autodiff),
        ("Helmholtz closure", c2_helmholtz),
        ("kernel and complete-lift detection", c3_kernel),
        ("regularization", c4_regularization),
        ("dynamics tangency", c5_tangency),
        ("constraint algorithm", c6_pca),
        ("metric consistency conditions", c7_consistency),
        ("Lagrangian complement", c8_complement),
        ("Tulczyjew map", c9_tulczyjew),
        ("integrator order", c10_rk4),
        ("determinism", c11_determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d})", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d})", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
