//! Built-in scenarios with their expected properties.

use std::sync::Arc;

use crate::chart::ChartSpec;
use crate::constraints::MetricData;
use crate::dynamics::{IntegratorOptions, Method};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::forms::LagrangianSystem;
use crate::regularizer::{AlmostProductSpec, ConnectionSpec};
use crate::sampling::SamplingSpec;

pub const SCENARIO_NAMES: [&str; 5] = ["cyclic_free_particle", "affine_lagrangian", "degenerate_metric_particle", "degenerate_metric_timedep", "harmonic_oscillator"];

pub type ReferenceFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Properties every scenario promises; `None` means "not asserted".
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Expected {
    pub kernel_rank: usize,
    pub complete_lift: Option<bool>,
    pub consistent: Option<bool>,
    pub regular: bool,
}

#[derive(Clone)]
pub struct SimulationSpec {
    /// Initial state in original-chart coordinates.
    pub initial: Vec<f64>,
    pub t_span: (f64, f64),
    pub options: IntegratorOptions,
    /// Closed-form reference in original-chart coordinates.
    pub reference: Option<ReferenceFn>,
}

impl std::fmt::Debug for SimulationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulationSpec").field("initial", &self.initial).field("t_span", &self.t_span).field("options", &self.options).finish()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: LagrangianSystem,
    pub metric: Option<MetricData>,
    /// Explicit generator of the metric kernel.
    pub kernel_field: Option<Vec<Expression>>,
    pub declared_constraints: Vec<Expression>,
    pub almost_product: AlmostProductSpec,
    pub connection: ConnectionSpec,
    /// Take the chart's fiber split on trust instead of requiring detection.
    pub declared_split: bool,
    pub sampling: SamplingSpec,
    pub simulation: Option<SimulationSpec>,
    /// Promised properties (built-in scenarios only).
    pub expected: Option<Expected>,
}

impl Scenario {
    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.system.chart
    }
}

fn chart(leaf: &[&str], fiber: &[&str], time: bool) -> Arc<ChartSpec> {
    Arc::new(ChartSpec::new(leaf, fiber, time).expect("static chart"))
}

fn parse(src: &str, c: &Arc<ChartSpec>) -> Expression {
    Expression::parse(src, c).expect("static expression")
}

fn base(name: &str, system: LagrangianSystem, expected: Expected) -> Scenario {
    let c = system.chart.clone();
    Scenario {
        name: name.into(),
        almost_product: AlmostProductSpec::zero(&c),
        connection: ConnectionSpec::Zero,
        system,
        metric: None,
        kernel_field: None,
        declared_constraints: Vec::new(),
        declared_split: false,
        sampling: SamplingSpec::default(),
        simulation: None,
        expected: Some(expected),
    }
}

fn rk45() -> IntegratorOptions {
    IntegratorOptions { method: Method::Rk45, ..Default::default() }
}

pub fn harmonic_oscillator() -> Scenario {
    let c = chart(&["q"], &[], false);
    let sys = LagrangianSystem::new(parse("0.5*(qdot^2 - q^2)", &c));
    let mut s = base("harmonic_oscillator", sys, Expected { kernel_rank: 0, complete_lift: Some(true), consistent: Some(true), regular: true });
    s.simulation = Some(SimulationSpec {
        initial: vec![1.0, 0.0],
        t_span: (0.0, 2.0 * std::f64::consts::PI),
        options: IntegratorOptions { method: Method::Rk4, step: 1e-3, ..Default::default() },
        reference: Some(Arc::new(|t: f64| vec![t.cos(), -t.sin()])),
    });
    s
}

pub fn cyclic_free_particle() -> Scenario {
    let c = chart(&["x"], &["f"], false);
    let sys = LagrangianSystem::new(parse("0.5*xdot^2", &c));
    let mut s = base("cyclic_free_particle", sys, Expected { kernel_rank: 2, complete_lift: Some(true), consistent: Some(true), regular: false });
    let (x0, f0, v0, w0) = (0.0, 0.0, 1.0, 0.0);
    s.simulation = Some(SimulationSpec {
        initial: vec![x0, f0, v0, w0],
        t_span: (0.0, 10.0),
        options: rk45(),
        reference: Some(Arc::new(move |t: f64| vec![x0 + v0 * t, f0 + w0 * t, v0, w0])),
    });
    s
}

/// `α = 0` or `α = f dx` in `L = α_i q̇^i − V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineForm {
    Zero,
    FDx,
}

pub fn affine_lagrangian_variant(alpha: AffineForm, potential: &str) -> Result<Scenario> {
    let c = chart(&["x"], &["f"], false);
    let kinetic = match alpha {
        AffineForm::Zero => "0".to_string(),
        AffineForm::FDx => "f*xdot".to_string(),
    };
    let l = Expression::parse(&kinetic, &c)?.sub(&Expression::parse(potential, &c)?);
    let sys = LagrangianSystem::new(l);
    let expected = match alpha {
        AffineForm::Zero => Expected { kernel_rank: 4, complete_lift: None, consistent: Some(false), regular: false },
        AffineForm::FDx => Expected { kernel_rank: 2, complete_lift: None, consistent: Some(true), regular: false },
    };
    Ok(base("affine_lagrangian", sys, expected))
}

pub fn affine_lagrangian() -> Scenario {
    affine_lagrangian_variant(AffineForm::Zero, "0.5*(x^2 + f^2)").expect("static scenario")
}

/// Metric `g = dx²` on `(x, f)` with potentials `A = a[0] dx + a[1] df` and `V`.
pub fn degenerate_metric_particle_with(a: [&str; 2], v: &str) -> Result<Scenario> {
    let c = chart(&["x"], &["f"], false);
    let g = vec![vec!["1".to_string(), "0".to_string()], vec!["0".to_string(), "0".to_string()]];
    let metric = MetricData::parse(&c, &g, &[a[0].to_string(), a[1].to_string()], v)?;
    let sys = LagrangianSystem::new(metric.lagrangian());
    let default = a == ["0", "0"] && v == "0.5*x^2";
    let mut s = base(
        "degenerate_metric_particle",
        sys,
        Expected { kernel_rank: 2, complete_lift: default.then_some(true), consistent: default.then_some(true), regular: false },
    );
    s.kernel_field = Some(vec![parse("0", &c), parse("1", &c)]);
    s.metric = Some(metric);
    let p = 0.5;
    s.almost_product = AlmostProductSpec::parse(&c, &[vec![p.to_string()]], None)?;
    s.connection = ConnectionSpec::Linear { leaf: vec![vec![vec![parse("0.3", &c)]]], fiber: vec![vec![vec![parse("0.2", &c)]]], time: None };
    if default {
        let (x0, f0, v0) = (0.5, 0.1, 0.2);
        s.simulation = Some(SimulationSpec {
            initial: vec![x0, f0, v0, p * v0],
            t_span: (0.0, 10.0),
            options: rk45(),
            reference: Some(Arc::new(move |t: f64| {
                let x = x0 * t.cos() + v0 * t.sin();
                let xd = -x0 * t.sin() + v0 * t.cos();
                vec![x, f0 + p * (x - x0), xd, p * xd]
            })),
        });
    }
    Ok(s)
}

pub fn degenerate_metric_particle() -> Scenario {
    degenerate_metric_particle_with(["0", "0"], "0.5*x^2").expect("static scenario")
}

pub fn degenerate_metric_timedep() -> Scenario {
    let c = chart(&["x"], &["f"], true);
    let g = vec![vec!["1".to_string(), "0".to_string()], vec!["0".to_string(), "0".to_string()]];
    let metric = MetricData::parse(&c, &g, &["0".into(), "0".into()], "0.5*x^2 + x*sin(t)").expect("static metric");
    let sys = LagrangianSystem::new(metric.lagrangian());
    let mut s = base("degenerate_metric_timedep", sys, Expected { kernel_rank: 2, complete_lift: Some(true), consistent: Some(true), regular: false });
    s.kernel_field = Some(vec![parse("0", &c), parse("1", &c)]);
    s.metric = Some(metric);
    let (p, q) = (0.25, 0.5);
    s.almost_product = AlmostProductSpec::parse(&c, &[vec![p.to_string()]], Some(&[q.to_string()])).expect("static spec");
    s.connection = ConnectionSpec::Linear {
        leaf: vec![vec![vec![parse("0.1*t", &c)]]],
        fiber: vec![vec![vec![parse("0", &c)]]],
        time: Some(vec![vec![parse("0.2", &c)]]),
    };
    s.sampling = SamplingSpec { bounds: vec![(-1.0, 1.0); 4].into_iter().chain([(0.0, 3.0)]).collect(), ..SamplingSpec::default() };
    let (x0, f0, v0) = (0.3, -0.2, 0.4);
    s.simulation = Some(SimulationSpec {
        initial: vec![x0, f0, v0, q + p * v0, 0.0],
        t_span: (0.0, 10.0),
        options: rk45(),
        reference: Some(Arc::new(move |t: f64| {
            let (s, c) = t.sin_cos();
            let x = x0 * c + (v0 - 0.5) * s + 0.5 * t * c;
            let xd = -x0 * s + (v0 - 0.5) * c + 0.5 * c - 0.5 * t * s;
            vec![x, f0 + q * t + p * (x - x0), xd, q + p * xd, t]
        })),
    });
    s
}

pub fn load_scenario(name: &str) -> Result<Scenario> {
    Ok(match name {
        "cyclic_free_particle" => cyclic_free_particle(),
        "affine_lagrangian" => affine_lagrangian(),
        "degenerate_metric_particle" => degenerate_metric_particle(),
        "degenerate_metric_timedep" => degenerate_metric_timedep(),
        "harmonic_oscillator" => harmonic_oscillator(),
        other => return Err(Error::UnknownScenario(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{degenerate_metric_consistency, kernel_basis};
    use crate::forms;
    use crate::linalg::RANK_TOL;

    #[test]
    fn every_name_loads() {
        for n in SCENARIO_NAMES {
            assert_eq!(load_scenario(n).unwrap().name, n);
        }
        assert!(matches!(load_scenario("torus"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn kernel_ranks_match_expectations() {
        for n in SCENARIO_NAMES {
            let s = load_scenario(n).unwrap();
            let pts = s.sampling.clone().with_seed(3).sample(s.chart()).unwrap();
            for p in &pts {
                let omega = forms::omega_matrix(&s.system, p).unwrap();
                let dt = forms::dt_covector(s.chart());
                assert_eq!(kernel_basis(&omega, dt.as_ref(), RANK_TOL).rank, s.expected.as_ref().unwrap().kernel_rank, "{n}");
            }
        }
    }

    #[test]
    fn metric_variant_fails_condition_two() {
        let s = degenerate_metric_particle_with(["0", "x"], "0").unwrap();
        let pts = s.sampling.sample(s.chart()).unwrap();
        let rep = degenerate_metric_consistency(s.metric.as_ref().unwrap(), s.kernel_field.as_deref(), &pts).unwrap();
        assert_eq!(rep.failing_condition(1e-12), Some(2));
        assert_eq!(rep.max[1], 1.0);
    }

    #[test]
    fn references_start_at_initial_state() {
        for n in SCENARIO_NAMES {
            let s = load_scenario(n).unwrap();
            if let Some(sim) = &s.simulation {
                let r = sim.reference.as_ref().unwrap()(sim.t_span.0);
                for (a, b) in r.iter().zip(&sim.initial) {
                    assert!((a - b).abs() < 1e-15, "{n}");
                }
            }
        }
    }
}
